import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_force_pit, fd_gradient_check
from seplab.errors import InvalidInputError
from seplab.losses import (
    a2t_loss,
    neg_si_sdr,
    neg_snr,
    pairwise_losses,
    pit_assign,
    reorder,
    separation_loss,
    si_sdr_db,
    snr_db,
    total_loss,
)
from seplab.models import ModelConfig, build_model


def _unit_power(rng, n=16000):
    x = rng.standard_normal(n)
    return x / np.sqrt(np.mean(x ** 2))


def test_snr_closed_forms(rng):
    ref = _unit_power(rng)
    e = rng.standard_normal(ref.size)
    e *= np.sqrt(0.01 * np.sum(ref ** 2) / np.sum(e ** 2))
    assert abs(snr_db(ref + e, ref).item() - 20.0) < 0.01
    assert abs(snr_db(ref, ref).item() - 80.0) < 1e-9
    assert abs(snr_db(np.zeros_like(ref), ref).item()) < 1e-6
    assert neg_snr(ref + e, ref).item() == -snr_db(ref + e, ref).item()


def test_snr_against_numpy_formula(rng):
    ref, est = rng.standard_normal(500), rng.standard_normal(500)
    err = np.sum((ref - est) ** 2)
    expected = 10 * math.log10(np.sum(ref ** 2) / (err + 1e-8 * np.sum(ref ** 2)))
    assert abs(snr_db(est, ref).item() - expected) < 1e-10


def test_si_sdr_against_projection_formula(rng):
    ref = rng.standard_normal(500)
    est = 0.7 * ref + 0.4 * rng.standard_normal(500)
    s = (est @ ref) / (ref @ ref) * ref
    expected = 10 * math.log10(np.sum(s ** 2) / np.sum((est - s) ** 2))
    assert abs(si_sdr_db(est, ref).item() - expected) < 1e-6


@pytest.mark.parametrize("alpha", [2.0, -0.3, 1e-3, 57.0])
def test_si_sdr_reference_scale_invariance(rng, alpha):
    ref, est = rng.standard_normal(4000), rng.standard_normal(4000) + rng.standard_normal(4000)
    assert abs(si_sdr_db(est, alpha * ref).item() - si_sdr_db(est, ref).item()) < 1e-6


def test_si_sdr_caps(rng):
    ref = rng.standard_normal(1000)
    assert si_sdr_db(3.0 * ref, ref).item() >= 80.0 - 1e-9
    orth = rng.standard_normal(1000)
    orth -= (orth @ ref) / (ref @ ref) * ref
    assert abs(si_sdr_db(orth, ref).item() + 80.0) < 1e-3


def test_metric_errors(rng):
    x = rng.standard_normal(10)
    with pytest.raises(InvalidInputError):
        snr_db(x, np.zeros(10))
    with pytest.raises(InvalidInputError):
        si_sdr_db(np.zeros(10), x)
    with pytest.raises(InvalidInputError):
        si_sdr_db(x, np.zeros(10))
    with pytest.raises(InvalidInputError):
        snr_db(x, x[:5])


def test_pairwise_layout(rng):
    ests, refs = torch.as_tensor(rng.standard_normal((3, 64))), torch.as_tensor(rng.standard_normal((3, 64)))
    table = pairwise_losses(ests, refs, neg_snr)
    for r in range(3):
        for e in range(3):
            assert table[r, e].item() == pytest.approx(neg_snr(ests[e], refs[r]).item(), abs=1e-12)


@pytest.mark.parametrize("lossfn", [neg_snr, neg_si_sdr])
def test_pit_matches_brute_force_on_100_triples(rng, lossfn):
    for _ in range(100):
        refs = torch.as_tensor(rng.standard_normal((3, 200)))
        ests = refs[torch.as_tensor(rng.permutation(3))] + 0.8 * torch.as_tensor(rng.standard_normal((3, 200)))
        perm, loss = pit_assign(ests, refs, lossfn)
        bperm, bloss = brute_force_pit(ests, refs, lossfn)
        assert perm == bperm
        assert abs(loss.item() - bloss) < 1e-9


def test_pit_swapped_exact_estimates(rng):
    refs = torch.as_tensor(rng.standard_normal((2, 300)))
    perm, loss = pit_assign(refs.flip(0), refs)
    assert perm == (1, 0)
    assert loss.item() == pytest.approx(-160.0, abs=1e-6)


def test_pit_tie_goes_to_smallest_permutation(rng):
    ref = torch.as_tensor(rng.standard_normal((1, 300)))
    refs = ref.expand(3, 300)
    perm, _ = pit_assign(refs.clone(), refs.clone())
    assert perm == (0, 1, 2)


def test_pit_invariant_to_reference_order(rng):
    refs = torch.as_tensor(rng.standard_normal((3, 100)))
    ests = torch.as_tensor(rng.standard_normal((3, 100)))
    _, a = pit_assign(ests, refs)
    _, b = pit_assign(ests, refs[[2, 0, 1]])
    assert abs(a.item() - b.item()) < 1e-9


def test_batched_pit_and_reorder(rng):
    refs = torch.as_tensor(rng.standard_normal((4, 2, 100)))
    ests = refs.flip(1) + 0.01 * torch.as_tensor(rng.standard_normal((4, 2, 100)))
    perms, losses = pit_assign(ests, refs)
    assert perms == [(1, 0)] * 4 and losses.shape == (4,)
    torch.testing.assert_close(reorder(ests, perms), refs, atol=0.1, rtol=0)
    assert separation_loss(ests, refs).item() == pytest.approx(losses.mean().item() / 2)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.integers(2, 4))
def test_pit_loss_permutation_invariant_property(seed, c):
    g = np.random.default_rng(seed)
    refs = torch.as_tensor(g.standard_normal((c, 50)))
    ests = torch.as_tensor(g.standard_normal((c, 50)))
    shuffle = g.permutation(c)
    _, a = pit_assign(ests, refs)
    _, b = pit_assign(ests[torch.as_tensor(shuffle)], refs)
    assert abs(a.item() - b.item()) < 1e-9


def test_a2t_perfect_copy_model_at_cap(rng):
    def copy_to_head(x):
        return torch.stack([x, torch.zeros_like(x) + 1e-3], 1)

    targets = torch.as_tensor(rng.standard_normal((2, 2, 400)))
    assert a2t_loss(copy_to_head, targets).item() == pytest.approx(-80.0, abs=1e-9)


def test_total_loss_without_a2t_equals_separation(rng):
    model = build_model(ModelConfig.micro("mixed", 1), dtype=torch.float64)
    y = torch.as_tensor(rng.standard_normal((2, 96)))
    refs = torch.as_tensor(rng.standard_normal((2, 2, 96)))
    assert total_loss(model, y, refs, 0.0).item() == separation_loss(model(y), refs).item()


def test_total_loss_gradient_decomposes(rng):
    model = build_model(ModelConfig.micro("simo_only"), seed=1, dtype=torch.float64)
    y = torch.as_tensor(rng.standard_normal((1, 96)))
    refs = torch.as_tensor(rng.standard_normal((1, 2, 96)))
    w = 0.3
    param = model.codec.enc_filters

    def grad_of(fn):
        model.zero_grad()
        fn().backward()
        return param.grad.clone()

    g_total = grad_of(lambda: total_loss(model, y, refs, w))
    g_sep = grad_of(lambda: separation_loss(model(y), refs))
    g_a2t = grad_of(lambda: a2t_loss(model, refs))
    torch.testing.assert_close(g_total, g_sep + w * g_a2t, rtol=1e-9, atol=1e-12)
    assert fd_gradient_check(model, lambda: total_loss(model, y, refs, w), n_samples=40) < 1e-3
