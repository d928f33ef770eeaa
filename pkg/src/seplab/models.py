"""SIMO-only, mixed SIMO-SISO and iterative SISO-only separation models.

All three designs share one backbone budget of ``M`` DPRNN blocks:

* ``simo_only``: ``M`` blocks, then a ``C``-head mask layer.
* ``mixed``: ``K`` SIMO blocks produce ``C`` intermediate features; each is
  fused with the mixture encoding and run through a shared ``M-K`` block
  SISO stack.
* ``siso_iterative``: ``K`` encoder blocks run once; ``M-K`` decoder blocks
  run once per source on the mixture encoding, the encoder feature and the
  encoding of what has not been separated yet.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from seplab.codec import WaveformCodec
from seplab.dprnn import DPRNNStack, GlobalLayerNorm
from seplab.errors import ConfigError, InvalidInputError, InvariantError

DESIGNS = ("simo_only", "mixed", "siso_iterative")
FUSION_KEYS = ("intermediate", "mixture_encoding", "bias_encoding")


@dataclass
class ModelConfig:
    design: str = "simo_only"
    M: int = 6
    K: int | None = None
    C: int = 2
    n_filters: int = 128
    window: int = 32
    hop: int | None = None
    block_dim: int = 64
    hidden: int = 128
    chunk_len: int = 100
    bidirectional_inter: bool = True
    mask_variant: bool = False
    fusion_inputs: tuple[str, ...] | None = None
    encoder_rectify: bool = False

    def __post_init__(self):
        if self.K is None:
            self.K = {"simo_only": self.M, "mixed": 2, "siso_iterative": 1}.get(self.design, self.M)
        if self.hop is None:
            self.hop = self.window // 2
        if self.fusion_inputs is None:
            self.fusion_inputs = (("intermediate", "mixture_encoding") if self.design == "mixed"
                                  else FUSION_KEYS)
        self.fusion_inputs = tuple(self.fusion_inputs)

    def validate(self) -> "ModelConfig":
        if self.design not in DESIGNS:
            raise ConfigError(f"design must be one of {DESIGNS}, got {self.design!r}")
        if self.M < 1:
            raise ConfigError(f"M must be >= 1, got {self.M}")
        if self.C < 1:
            raise ConfigError(f"C must be >= 1, got {self.C}")
        if self.design == "simo_only" and self.K != self.M:
            raise ConfigError(f"simo_only requires K == M, got K={self.K}, M={self.M}")
        if self.design == "mixed" and not 0 <= self.K <= self.M - 1:
            raise ConfigError(f"mixed requires 0 <= K <= M-1, got K={self.K}, M={self.M}")
        if self.design == "siso_iterative" and not 1 <= self.K <= self.M - 1:
            raise ConfigError(f"siso_iterative requires 1 <= K <= M-1, got K={self.K}, M={self.M}")
        if self.hop < 1 or self.window % self.hop:
            raise ConfigError(f"hop {self.hop} must divide window {self.window}")
        if self.chunk_len < 2 or self.chunk_len % 2:
            raise ConfigError(f"chunk_len must be even and >= 2, got {self.chunk_len}")
        unknown = set(self.fusion_inputs) - set(FUSION_KEYS)
        if unknown:
            raise ConfigError(f"unknown fusion inputs {sorted(unknown)}")
        if self.design == "mixed":
            if "intermediate" not in self.fusion_inputs:
                raise ConfigError("mixed design must fuse the intermediate feature")
            if "bias_encoding" in self.fusion_inputs:
                raise ConfigError("bias_encoding only exists in the siso_iterative design")
        if self.design == "siso_iterative" and "bias_encoding" not in self.fusion_inputs:
            raise ConfigError("siso_iterative must fuse bias_encoding or every iteration is identical")
        if self.mask_variant and self.design != "mixed":
            raise ConfigError("mask_variant applies to the mixed design only")
        return self

    @property
    def config_id(self) -> str:
        return f"{self.design}-K{self.K}-M{self.M}"

    @property
    def split(self) -> tuple[int, int]:
        """Block counts as the ``(first, second)`` table columns."""
        if self.design == "simo_only":
            return self.M, 0
        return self.K, self.M - self.K

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["fusion_inputs"] = list(self.fusion_inputs)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown model config keys {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def desk(cls, design: str, K: int | None = None, **kw) -> "ModelConfig":
        """Narrow widths for CPU-scale runs."""
        kw = {"block_dim": 16, "hidden": 32, "chunk_len": 16} | kw
        return cls(design=design, K=K, **kw)

    @classmethod
    def micro(cls, design: str, K: int | None = None, **kw) -> "ModelConfig":
        kw = {"M": 2, "n_filters": 16, "window": 8, "block_dim": 8, "hidden": 8,
              "chunk_len": 4} | kw
        return cls(design=design, K=K, **kw)


def table1_configs(base: ModelConfig | None = None) -> list[ModelConfig]:
    """The SIMO-only row and every mixed split, ordered as SIMO blocks M, M-1, ..., 0."""
    base = base or ModelConfig()
    rows = [dataclasses.replace(base, design="simo_only", K=base.M, fusion_inputs=None)]
    rows += [dataclasses.replace(base, design="mixed", K=k, fusion_inputs=None)
             for k in range(base.M - 1, -1, -1)]
    return [dataclasses.replace(r) for r in rows]


def table2_configs(base: ModelConfig | None = None) -> list[ModelConfig]:
    """Every iterative SISO split, ordered as encoder blocks 1..M-1."""
    base = base or ModelConfig()
    return [dataclasses.replace(base, design="siso_iterative", K=k, fusion_inputs=None,
                                mask_variant=False)
            for k in range(1, base.M)]


class Bottleneck(nn.Module):
    """Encoder width -> block width."""

    def __init__(self, n_in: int, n_out: int):
        super().__init__()
        self.norm = GlobalLayerNorm(n_in)
        self.proj = nn.Conv1d(n_in, n_out, 1)

    def forward(self, x):
        return self.proj(self.norm(x))


class OutputHead(nn.Module):
    """``PReLU -> 1x1 conv`` from block width to ``n_heads`` features of width ``n_out``."""

    def __init__(self, n_in: int, n_out: int, n_heads: int = 1):
        super().__init__()
        self.n_heads = n_heads
        self.n_out = n_out
        self.act = nn.PReLU()
        self.proj = nn.Conv1d(n_in, n_out * n_heads, 1)

    def forward(self, x):
        b, _, length = x.shape
        return self.proj(self.act(x)).reshape(b, self.n_heads, self.n_out, length)


class Fusion(nn.Module):
    """Concatenate features along channels and project to block width (no bias)."""

    def __init__(self, n_inputs: int, width: int, n_out: int):
        super().__init__()
        self.n_inputs = n_inputs
        self.width = width
        self.proj = nn.Conv1d(n_inputs * width, n_out, 1, bias=False)

    def forward(self, features: list[torch.Tensor]) -> torch.Tensor:
        if len(features) != self.n_inputs:
            raise InvariantError(f"fusion expects {self.n_inputs} inputs, got {len(features)}")
        shape = features[0].shape
        for f in features:
            if f.shape != shape or f.shape[-2] != self.width:
                raise InvariantError(
                    f"fusion inputs must share shape [..., {self.width}, L]; "
                    f"got {[tuple(g.shape) for g in features]}"
                )
        return self.proj(torch.cat(features, dim=-2))


def fuse(features: list[torch.Tensor], fusion: Fusion) -> torch.Tensor:
    return fusion(features)


class SeparationModel(nn.Module):
    """One waveform ``[B, t]`` in, ``C`` waveforms ``[B, C, t]`` out."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        cfg = config.validate()
        self.config = cfg
        n, d = cfg.n_filters, cfg.block_dim
        self.codec = WaveformCodec(n, cfg.window, cfg.hop, rectify=cfg.encoder_rectify)

        def stack(n_blocks):
            return DPRNNStack(n_blocks, d, cfg.hidden, cfg.chunk_len, cfg.bidirectional_inter)

        if cfg.design == "simo_only":
            self.bottleneck = Bottleneck(n, d)
            self.simo = stack(cfg.M)
            self.heads = OutputHead(d, n, cfg.C)
        elif cfg.design == "mixed":
            if cfg.K == 0:
                # no SIMO blocks: a single FC layer maps E(y) to C features
                self.bottleneck = None
                self.simo = stack(0)
                self.heads = nn.Conv1d(n, n * cfg.C, 1)
            else:
                self.bottleneck = Bottleneck(n, d)
                self.simo = stack(cfg.K)
                self.heads = OutputHead(d, n, cfg.C)
            self.fusion = Fusion(len(cfg.fusion_inputs), n, d)
            self.siso = stack(cfg.M - cfg.K)
            self.out = OutputHead(d, n)
        else:
            self.bottleneck = Bottleneck(n, d)
            self.encoder_stack = stack(cfg.K)
            self.encoder_out = nn.Conv1d(d, n, 1)
            self.fusion = Fusion(len(cfg.fusion_inputs), n, d)
            self.decoder_stack = stack(cfg.M - cfg.K)
            self.out = OutputHead(d, n)
        if self.n_blocks != cfg.M:
            raise InvariantError(f"built {self.n_blocks} blocks, expected {cfg.M}")

    @property
    def n_blocks(self) -> int:
        return sum(len(m) for m in self.modules() if isinstance(m, DPRNNStack))

    @property
    def is_iterative(self) -> bool:
        return self.config.design == "siso_iterative"

    def forward(self, y: torch.Tensor, n_sources: int | None = None) -> torch.Tensor:
        design = self.config.design
        if design == "simo_only":
            return self.forward_simo_only(y)
        if design == "mixed":
            return self.forward_mixed(y)
        return self.forward_siso_iterative(y, n_sources)

    def _check_input(self, y: torch.Tensor) -> torch.Tensor:
        if y.dim() == 1:
            y = y.unsqueeze(0)
        if y.dim() != 2:
            raise InvalidInputError(f"expected waveform [B, t], got {tuple(y.shape)}")
        return y

    # -- SIMO-only --------------------------------------------------------

    def simo_masks(self, mix_enc: torch.Tensor) -> torch.Tensor:
        """``C`` rectified masks ``[B, C, N, L]`` from the mixture encoding."""
        return F.relu(self.heads(self.simo(self.bottleneck(mix_enc))))

    def forward_simo_only(self, y: torch.Tensor, masks: torch.Tensor | None = None) -> torch.Tensor:
        y = self._check_input(y)
        mix_enc = self.codec.encode(y)
        if masks is None:
            masks = self.simo_masks(mix_enc)
        return self.codec.decode(masks * mix_enc.unsqueeze(1), y.shape[-1])

    # -- mixed SIMO-SISO --------------------------------------------------

    def intermediate_features(self, mix_enc: torch.Tensor) -> torch.Tensor:
        """SIMO module output ``[B, C, N, L]``; masked mixture encodings when ``mask_variant``."""
        if self.config.K == 0:
            b, n, length = mix_enc.shape
            out = self.heads(mix_enc).reshape(b, self.config.C, n, length)
        else:
            out = self.heads(self.simo(self.bottleneck(mix_enc)))
        if self.config.mask_variant:
            out = F.relu(out) * mix_enc.unsqueeze(1)
        return out

    def siso_branch(self, features: torch.Tensor, mix_enc: torch.Tensor) -> torch.Tensor:
        """Shared SISO stack applied to each of the ``C`` features ``[B, C, N, L]``."""
        b, c, n, length = features.shape
        flat = features.reshape(b * c, n, length)
        mix = mix_enc.unsqueeze(1).expand(b, c, n, length).reshape(b * c, n, length)
        inputs = {"intermediate": flat, "mixture_encoding": mix}
        fused = self.fusion([inputs[k] for k in self.config.fusion_inputs])
        out = self.out(self.siso(fused)).reshape(b, c, n, length)
        if self.config.mask_variant:
            out = out + features
        return out

    def forward_mixed(self, y: torch.Tensor) -> torch.Tensor:
        y = self._check_input(y)
        mix_enc = self.codec.encode(y)
        feats = self.intermediate_features(mix_enc)
        return self.codec.decode(self.siso_branch(feats, mix_enc), y.shape[-1])

    # -- iterative SISO-only ---------------------------------------------

    def encoder_feature(self, mix_enc: torch.Tensor) -> torch.Tensor:
        """Shared feature ``H`` ``[B, N, L]``, computed once per mixture."""
        return self.encoder_out(self.encoder_stack(self.bottleneck(mix_enc)))

    def residual_bias(self, y: torch.Tensor, estimates: list[torch.Tensor]) -> torch.Tensor:
        """Encoding of ``y`` minus every estimate so far; all-zero before the first estimate."""
        if not estimates:
            b = y.shape[0]
            return y.new_zeros(b, self.codec.n_filters, self.codec.n_frames(y.shape[-1]))
        residual = y - torch.stack(estimates, 0).sum(0)
        return self.codec.encode(residual)

    def decode_step(self, mix_enc: torch.Tensor, h: torch.Tensor, bias: torch.Tensor,
                    length: int) -> torch.Tensor:
        inputs = {"mixture_encoding": mix_enc, "intermediate": h, "bias_encoding": bias}
        fused = self.fusion([inputs[k] for k in self.config.fusion_inputs])
        z = self.out(self.decoder_stack(fused))[:, 0]
        return self.codec.decode(z, length)

    def forward_siso_iterative(self, y: torch.Tensor, n_sources: int | None = None,
                               teacher: torch.Tensor | None = None,
                               trace: list | None = None) -> torch.Tensor:
        """Separate ``n_sources`` signals one at a time.

        ``teacher`` ``[B, C', t]`` replaces the first ``C'`` estimates when forming
        residuals. ``trace``, if given, collects each iteration's bias feature.
        """
        y = self._check_input(y)
        n_sources = self.config.C if n_sources is None else n_sources
        if n_sources < 1:
            raise InvalidInputError(f"number of sources must be >= 1, got {n_sources}")
        length = y.shape[-1]
        mix_enc = self.codec.encode(y)
        h = self.encoder_feature(mix_enc)
        estimates, used = [], []
        for j in range(n_sources):
            bias = self.residual_bias(y, used)
            if trace is not None:
                trace.append(bias)
            est = self.decode_step(mix_enc, h, bias, length)
            estimates.append(est)
            used.append(teacher[:, j] if teacher is not None and j < teacher.shape[1] else est)
        return torch.stack(estimates, 1)


def _require(model: SeparationModel, design: str):
    if model.config.design != design:
        raise ConfigError(f"model design is {model.config.design!r}, not {design!r}")


def forward_simo_only(model: SeparationModel, y: torch.Tensor) -> torch.Tensor:
    _require(model, "simo_only")
    return model.forward_simo_only(y)


def forward_mixed(model: SeparationModel, y: torch.Tensor) -> torch.Tensor:
    _require(model, "mixed")
    return model.forward_mixed(y)


def forward_siso_iterative(model: SeparationModel, y: torch.Tensor, C: int | None = None,
                           **kw) -> torch.Tensor:
    _require(model, "siso_iterative")
    return model.forward_siso_iterative(y, C, **kw)


def build_model(config: ModelConfig, seed: int = 0, dtype: torch.dtype = torch.float32) -> SeparationModel:
    """Deterministically initialised model for ``config``."""
    config.validate()
    gen_state = torch.random.get_rng_state()
    try:
        torch.manual_seed(seed)
        model = SeparationModel(config)
    finally:
        torch.random.set_rng_state(gen_state)
    return model.to(dtype)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def save_checkpoint(model: SeparationModel, path, extra: dict | None = None) -> Path:
    """Write config echo plus named parameter arrays to one ``.npz`` archive."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {"config": model.config.to_dict(), "extra": extra or {}}
    arrays = {f"param/{k}": v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.array(json.dumps(meta, sort_keys=True)), **arrays)
    return path


def load_checkpoint(path) -> tuple[SeparationModel, dict]:
    with np.load(path, allow_pickle=False) as archive:
        meta = json.loads(str(archive["__meta__"]))
        state = {k[len("param/"):]: torch.from_numpy(archive[k].copy())
                 for k in archive.files if k.startswith("param/")}
    config = ModelConfig.from_dict(meta["config"])
    model = SeparationModel(config)
    dtype = next(iter(state.values())).dtype
    model = model.to(dtype)
    model.load_state_dict(state)
    return model, meta.get("extra", {})
