import dataclasses
import itertools

import numpy as np
import pytest
import torch

from oracles import fd_gradient_check, param_count
from seplab.errors import ConfigError, InvalidInputError, InvariantError
from seplab.losses import separation_loss
from seplab.models import (
    Fusion,
    ModelConfig,
    build_model,
    count_parameters,
    forward_mixed,
    forward_siso_iterative,
    forward_simo_only,
    fuse,
    load_checkpoint,
    save_checkpoint,
    table1_configs,
    table2_configs,
)

DESIGN_KS = [("simo_only", None), ("mixed", 0), ("mixed", 1), ("siso_iterative", 1)]


def _micro(design, K=None, **kw):
    return build_model(ModelConfig.micro(design, K, **kw), seed=3, dtype=torch.float64)


@pytest.mark.parametrize("cfg", table1_configs() + table2_configs(), ids=lambda c: c.config_id)
def test_parameter_count_matches_layer_arithmetic(cfg):
    assert count_parameters(build_model(cfg)) == param_count(cfg.design, cfg.M, cfg.K)


def test_parameter_counts_reference_values():
    counts = {c.config_id: count_parameters(build_model(c)) for c in table1_configs() + table2_configs()}
    assert counts["simo_only-K6-M6"] == 2_616_129
    assert counts["mixed-K2-M6"] == 2_640_834
    assert counts["mixed-K0-M6"] == 2_648_705
    assert counts["siso_iterative-K1-M6"] == 2_640_705
    values = list(counts.values())
    worst = max(abs(a - b) / max(a, b) for a, b in itertools.combinations(values, 2))
    assert worst < 0.05


def test_count_invariant_to_seed():
    cfg = ModelConfig.micro("mixed", 1)
    assert count_parameters(build_model(cfg, seed=0)) == count_parameters(build_model(cfg, seed=9))


def test_table_grids():
    t1 = table1_configs()
    assert [c.split for c in t1] == [(6, 0), (5, 1), (4, 2), (3, 3), (2, 4), (1, 5), (0, 6)]
    assert sum(c.design == "simo_only" for c in t1) == 1
    assert [c.split for c in table2_configs()] == [(1, 5), (2, 4), (3, 3), (4, 2), (5, 1)]


def test_block_totals():
    model = build_model(ModelConfig(design="mixed", K=2))
    assert len(model.simo) == 2 and len(model.siso) == 4 and model.n_blocks == 6
    model = build_model(ModelConfig(design="mixed", K=0))
    assert len(model.simo) == 0 and len(model.siso) == 6 and not model.is_iterative
    for cfg in table1_configs(ModelConfig.micro("simo_only", M=4)) + table2_configs(
            ModelConfig.micro("simo_only", M=4)):
        assert build_model(cfg).n_blocks == 4


@pytest.mark.parametrize("kw", [
    dict(design="mixed", K=7), dict(design="mixed", K=6), dict(design="simo_only", K=3),
    dict(design="siso_iterative", K=0), dict(design="siso_iterative", K=6), dict(design="nope"),
    dict(design="mixed", chunk_len=15), dict(design="mixed", window=32, hop=5),
    dict(design="mixed", fusion_inputs=("mixture_encoding",)),
    dict(design="mixed", fusion_inputs=("intermediate", "bias_encoding")),
    dict(design="siso_iterative", fusion_inputs=("intermediate", "mixture_encoding")),
    dict(design="simo_only", mask_variant=True), dict(design="mixed", C=0),
])
def test_invalid_configs(kw):
    with pytest.raises(ConfigError):
        build_model(ModelConfig(**kw))


def test_same_seed_bit_identical_parameters():
    a = build_model(ModelConfig(design="simo_only"), seed=0)
    b = build_model(ModelConfig(design="simo_only"), seed=0)
    for (na, pa), (nb, pb) in zip(a.state_dict().items(), b.state_dict().items()):
        assert na == nb and torch.equal(pa, pb)
    c = build_model(ModelConfig(design="simo_only"), seed=1)
    assert not torch.equal(a.codec.enc_filters, c.codec.enc_filters)


def test_build_model_leaves_global_rng_alone():
    torch.manual_seed(5)
    expected = torch.rand(3)
    torch.manual_seed(5)
    build_model(ModelConfig.micro("mixed", 1), seed=0)
    assert torch.equal(torch.rand(3), expected)


@pytest.mark.parametrize("design,K", DESIGN_KS)
@pytest.mark.parametrize("t", [32, 128, 203])
def test_output_shapes(design, K, t):
    model = _micro(design, K)
    y = torch.randn(3, t, dtype=torch.float64)
    assert model(y).shape == (3, 2, t)
    assert model(y[0]).shape == (1, 2, t)


def test_bad_input_rank():
    with pytest.raises(InvalidInputError):
        _micro("mixed", 1)(torch.zeros(1, 1, 64, dtype=torch.float64))


def test_design_specific_entry_points():
    y = torch.randn(1, 64, dtype=torch.float64)
    simo, mixed, siso = _micro("simo_only"), _micro("mixed", 1), _micro("siso_iterative", 1)
    assert torch.equal(forward_simo_only(simo, y), simo(y))
    assert torch.equal(forward_mixed(mixed, y), mixed(y))
    assert torch.equal(forward_siso_iterative(siso, y), siso(y))
    with pytest.raises(ConfigError):
        forward_mixed(simo, y)


def test_simo_masks_nonnegative_and_identity_masks():
    model = _micro("simo_only")
    y = torch.randn(2, 100, dtype=torch.float64)
    mix_enc = model.codec.encode(y)
    masks = model.simo_masks(mix_enc)
    assert masks.shape == (2, 2, 16, mix_enc.shape[-1])
    assert bool((masks >= 0).all())
    out = model.forward_simo_only(y, masks=torch.ones_like(masks))
    ref = model.codec.decode(mix_enc, 100)
    assert torch.equal(out[:, 0], ref) and torch.equal(out[:, 1], ref)


@pytest.mark.parametrize("mask_variant", [False, True])
def test_shared_siso_is_permutation_equivariant(mask_variant):
    model = _micro("mixed", 1, C=3, mask_variant=mask_variant)
    y = torch.randn(2, 90, dtype=torch.float64)
    mix_enc = model.codec.encode(y)
    feats = model.intermediate_features(mix_enc)
    base = model.siso_branch(feats, mix_enc)
    for perm in itertools.permutations(range(3)):
        out = model.siso_branch(feats[:, list(perm)], mix_enc)
        torch.testing.assert_close(out, base[:, list(perm)], rtol=0, atol=1e-12)


def test_mask_variant_features_are_masked_mixture():
    model = _micro("mixed", 1, mask_variant=True)
    y = torch.randn(1, 64, dtype=torch.float64)
    mix_enc = model.codec.encode(y)
    feats = model.intermediate_features(mix_enc)
    raw = model.heads(model.simo(model.bottleneck(mix_enc)))
    torch.testing.assert_close(feats, torch.relu(raw) * mix_enc.unsqueeze(1))


def test_iterative_bias_contract():
    model = _micro("siso_iterative", 1, C=3)
    y = torch.randn(2, 120, dtype=torch.float64)
    trace = []
    ests = model.forward_siso_iterative(y, trace=trace)
    assert len(trace) == 3
    mix_enc = model.codec.encode(y)
    assert trace[0].shape == mix_enc.shape
    assert torch.count_nonzero(trace[0]) == 0
    for j in (1, 2):
        residual = y - ests[:, :j].sum(1)
        expected = model.codec.encode(residual)
        assert (torch.max(torch.abs(trace[j] - expected)) / torch.max(torch.abs(expected))) < 1e-5


def test_iterative_oracle_first_estimate_gives_encoded_remainder():
    model = _micro("siso_iterative", 1)
    x1, x2, n = (torch.randn(1, 96, dtype=torch.float64) for _ in range(3))
    y = x1 + x2 + n
    trace = []
    model.forward_siso_iterative(y, teacher=x1.unsqueeze(1), trace=trace)
    expected = model.codec.encode(x2 + n)
    assert (torch.max(torch.abs(trace[1] - expected)) / torch.max(torch.abs(expected))) < 1e-5


def test_iterative_single_and_invalid_counts():
    model = _micro("siso_iterative", 1)
    y = torch.randn(1, 64, dtype=torch.float64)
    assert model(y, n_sources=1).shape == (1, 1, 64)
    assert torch.equal(model(y, n_sources=1)[:, 0], model(y)[:, 0])
    with pytest.raises(InvalidInputError):
        model(y, n_sources=0)


def test_fusion_widths_and_linearity():
    torch.manual_seed(0)
    fusion = Fusion(2, 128, 64).double()
    a, b = torch.randn(1, 128, 7, dtype=torch.float64), torch.randn(1, 128, 7, dtype=torch.float64)
    assert fuse([a, b], fusion).shape == (1, 64, 7)
    assert fusion.proj.weight.shape == (64, 256, 1)
    first = torch.nn.functional.conv1d(a, fusion.proj.weight[:, :128])
    torch.testing.assert_close(fuse([a, torch.zeros_like(b)], fusion), first)
    single = Fusion(1, 128, 64).double()
    assert fuse([a], single).shape == (1, 64, 7)
    with pytest.raises(InvariantError):
        fuse([a, b[..., :5]], fusion)
    with pytest.raises(InvariantError):
        fuse([a], fusion)


def test_intermediate_only_fusion_builds():
    model = _micro("mixed", 1, fusion_inputs=("intermediate",))
    assert model(torch.randn(1, 64, dtype=torch.float64)).shape == (1, 2, 64)


def test_checkpoint_round_trip(tmp_path):
    model = _micro("mixed", 1)
    path = save_checkpoint(model, tmp_path / "m.npz", extra={"stamp": "abc"})
    loaded, extra = load_checkpoint(path)
    assert extra == {"stamp": "abc"}
    assert loaded.config == model.config
    y = torch.randn(1, 80, dtype=torch.float64)
    assert torch.equal(loaded(y), model(y))


def test_config_dict_round_trip():
    cfg = ModelConfig.desk("siso_iterative", 2)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError):
        ModelConfig.from_dict({**cfg.to_dict(), "extra": 1})
    assert dataclasses.replace(cfg, K=3).config_id == "siso_iterative-K3-M6"


@pytest.mark.parametrize("design,K", DESIGN_KS)
def test_end_to_end_gradient(design, K):
    model = _micro(design, K)
    gen = torch.Generator().manual_seed(0)
    y = torch.randn(2, 128, generator=gen, dtype=torch.float64)
    refs = torch.randn(2, 2, 128, generator=gen, dtype=torch.float64)
    assert fd_gradient_check(model, lambda: separation_loss(model(y), refs), n_samples=60) < 1e-4
