import math

import numpy as np
import pytest
import torch

from seplab.dprnn import ChunkedFeature, DPRNNBlock, DPRNNStack, dprnn_block, merge, segment
from seplab.errors import ConfigError, InvariantError


def _segment_oracle(x, k):
    # chunk s starts at frame s*P - P of the original sequence (front pad P)
    d, length = x.shape
    p = k // 2
    n_chunks = math.ceil(length / p) + 1
    out = np.zeros((d, k, n_chunks))
    for s in range(n_chunks):
        for j in range(k):
            f = s * p - p + j
            if 0 <= f < length:
                out[:, j, s] = x[:, f]
    return out


def test_chunk_count_when_length_equals_chunk():
    ch = segment(torch.zeros(1, 4, 20), 20)
    assert ch.n_chunks == 3
    assert ch.chunk_len == 20
    assert torch.count_nonzero(ch.data) == 0


@pytest.mark.parametrize("length,k", [(1, 4), (7, 4), (20, 20), (100, 20), (37, 16)])
def test_segment_matches_placement_oracle(rng, length, k):
    x = rng.standard_normal((3, length))
    ch = segment(torch.as_tensor(x).unsqueeze(0), k)
    np.testing.assert_array_equal(ch.data[0].numpy(), _segment_oracle(x, k))
    assert ch.pad_frames == ch.n_chunks * (k // 2) - length


def test_round_trip_exact(rng):
    x = torch.as_tensor(rng.standard_normal((2, 64, 100)))
    assert torch.equal(merge(segment(x, 20)), x)


def test_round_trip_integer_values_bit_exact():
    x = torch.arange(5 * 33, dtype=torch.float32).reshape(1, 5, 33)
    assert torch.equal(merge(segment(x, 6)), x)


def test_round_trip_gradient_is_identity(rng):
    x = torch.as_tensor(rng.standard_normal((1, 3, 17)), dtype=torch.float64).requires_grad_()
    g = torch.as_tensor(rng.standard_normal((1, 3, 17)))
    merge(segment(x, 4)).backward(g)
    torch.testing.assert_close(x.grad, g)


def test_segment_rejects_bad_chunk():
    with pytest.raises(ConfigError):
        segment(torch.zeros(1, 2, 10), 1)
    with pytest.raises(ConfigError):
        segment(torch.zeros(1, 2, 10), 5)


def test_merge_rejects_inconsistent_padding():
    ch = segment(torch.zeros(1, 2, 10), 4)
    with pytest.raises(InvariantError):
        merge(ChunkedFeature(ch.data, ch.pad_frames + 1, ch.length))


def test_block_preserves_shape_and_checks_width():
    torch.manual_seed(0)
    block = DPRNNBlock(8, 6)
    x = torch.randn(2, 8, 4, 5)
    assert block(x).shape == x.shape
    assert dprnn_block(segment(torch.randn(2, 8, 9), 4), block).data.shape == segment(
        torch.randn(2, 8, 9), 4).data.shape
    with pytest.raises(InvariantError):
        block(torch.randn(2, 7, 4, 5))


def test_zero_projection_block_is_identity():
    torch.manual_seed(0)
    block = DPRNNBlock(8, 6)
    block.zero_projections()
    x = torch.randn(2, 8, 4, 5)
    assert torch.equal(block(x), x)


def test_zero_projection_stack_is_identity(rng):
    torch.manual_seed(0)
    stack = DPRNNStack(3, 8, 6, chunk_len=4).double()
    for b in stack.blocks:
        b.zero_projections()
    x = torch.as_tensor(rng.standard_normal((2, 8, 13)))
    torch.testing.assert_close(stack(x), x, rtol=0, atol=1e-12)
    assert len(DPRNNStack(0, 8, 6, 4)) == 0
    assert torch.equal(DPRNNStack(0, 8, 6, 4)(x), x)


def test_unidirectional_inter_option():
    block = DPRNNBlock(8, 6, bidirectional_inter=False)
    assert not block.inter.rnn.bidirectional
    assert block.intra.rnn.bidirectional


def test_block_gradient_matches_finite_differences(rng):
    torch.manual_seed(0)
    block = DPRNNBlock(8, 5).double()
    x = torch.as_tensor(rng.standard_normal((1, 8, 6, 4)))
    w = torch.as_tensor(rng.standard_normal((1, 8, 6, 4)))
    assert torch.autograd.gradcheck(lambda inp: (block(inp) * w).sum(), (x.requires_grad_(),),
                                    eps=1e-6, atol=1e-7, rtol=1e-5)
    params = [p for p in block.parameters()]

    def loss_fn():
        return (block(x.detach()) * w).sum()

    block.zero_grad()
    loss_fn().backward()
    step = 1e-6
    worst = 0.0
    with torch.no_grad():
        for p in params:
            flat = p.view(-1)
            for i in range(0, flat.numel(), max(1, flat.numel() // 7)):
                orig = flat[i].item()
                flat[i] = orig + step
                up = loss_fn().item()
                flat[i] = orig - step
                down = loss_fn().item()
                flat[i] = orig
                num = (up - down) / (2 * step)
                ana = p.grad.view(-1)[i].item()
                worst = max(worst, abs(num - ana) / max(abs(num), abs(ana), 1e-6))
    assert worst < 1e-5
