"""Learned linear waveform encoder / decoder.

The encoder is a strided 1-D convolution with no bias, so ``encode`` is an
exact linear map from waveforms to ``[N, L]`` latent frames. The decoder is
the matching transposed convolution (overlap-add synthesis).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from seplab.errors import ConfigError, InvalidInputError


@dataclass
class EncoderBasis:
    """Analysis (or synthesis) filters of shape ``[N, W]`` and a hop in samples."""

    filters: torch.Tensor
    hop: int

    def __post_init__(self):
        if self.filters.dim() != 2:
            raise ConfigError(f"filters must be [N, W], got shape {tuple(self.filters.shape)}")
        if self.hop < 1 or self.window % self.hop:
            raise ConfigError(f"hop {self.hop} must divide window {self.window}")

    @property
    def n_filters(self) -> int:
        return self.filters.shape[0]

    @property
    def window(self) -> int:
        return self.filters.shape[1]


# The decoder basis has the same layout: N synthesis filters of W samples.
DecoderBasis = EncoderBasis


@dataclass
class LatentFeature:
    """Latent frames ``data`` of shape ``[..., N, L]`` for a waveform of ``sample_anchor`` samples."""

    data: torch.Tensor
    sample_anchor: int

    @property
    def N(self) -> int:
        return self.data.shape[-2]

    @property
    def L(self) -> int:
        return self.data.shape[-1]


def frame_count(t: int, window: int, hop: int) -> int:
    """Number of frames for a length-``t`` signal; the tail is zero-padded to a full frame."""
    if t < window:
        raise InvalidInputError(f"waveform of {t} samples is shorter than one window ({window})")
    return math.ceil((t - window) / hop) + 1


def window_samples(window_ms: float, sample_rate: int) -> int:
    w = window_ms * sample_rate / 1000
    if abs(w - round(w)) > 1e-9:
        raise ConfigError(f"{window_ms} ms at {sample_rate} Hz is not a whole number of samples")
    return int(round(w))


def _analysis(x: torch.Tensor, filters: torch.Tensor, hop: int) -> torch.Tensor:
    # x: [B, t] -> [B, N, L]
    t = x.shape[-1]
    window = filters.shape[1]
    n_frames = frame_count(t, window, hop)
    pad = (n_frames - 1) * hop + window - t
    if pad:
        x = F.pad(x, (0, pad))
    return F.conv1d(x.unsqueeze(1), filters.unsqueeze(1), stride=hop)


def _synthesis(z: torch.Tensor, filters: torch.Tensor, hop: int, length: int) -> torch.Tensor:
    # z: [B, N, L] -> [B, length]
    if z.shape[-2] != filters.shape[0]:
        raise ConfigError(
            f"latent has {z.shape[-2]} channels but the decoder basis has {filters.shape[0]} filters"
        )
    if z.shape[-1] < 1:
        raise InvalidInputError("latent must contain at least one frame")
    out = F.conv_transpose1d(z, filters.unsqueeze(1), stride=hop).squeeze(1)
    if out.shape[-1] >= length:
        return out[..., :length]
    return F.pad(out, (0, length - out.shape[-1]))


def _as_batch(x: torch.Tensor) -> tuple[torch.Tensor, tuple]:
    lead = tuple(x.shape[:-1])
    return x.reshape(-1, x.shape[-1]), lead


def encode(waveform: torch.Tensor, basis: EncoderBasis) -> LatentFeature:
    """Map a waveform ``[..., t]`` to latent frames ``[..., N, L]``."""
    waveform = torch.as_tensor(waveform, dtype=basis.filters.dtype)
    if not torch.isfinite(waveform).all():
        raise InvalidInputError("waveform contains non-finite samples")
    flat, lead = _as_batch(waveform)
    z = _analysis(flat, basis.filters, basis.hop)
    return LatentFeature(z.reshape(*lead, *z.shape[-2:]), waveform.shape[-1])


def decode(latent: LatentFeature, basis: DecoderBasis) -> torch.Tensor:
    """Overlap-add synthesis back to ``latent.sample_anchor`` samples."""
    data = latent.data
    lead = tuple(data.shape[:-2])
    z = data.reshape(-1, *data.shape[-2:])
    out = _synthesis(z, basis.filters, basis.hop, latent.sample_anchor)
    return out.reshape(*lead, out.shape[-1])


class WaveformCodec(nn.Module):
    """Trainable encoder/decoder pair (the ``E(.)`` front-end and its synthesis counterpart)."""

    def __init__(self, n_filters: int = 128, window: int = 32, hop: int | None = None,
                 rectify: bool = False):
        super().__init__()
        hop = window // 2 if hop is None else hop
        if hop < 1 or window % hop:
            raise ConfigError(f"hop {hop} must divide window {window}")
        self.window = window
        self.hop = hop
        self.rectify = rectify
        self.enc_filters = nn.Parameter(torch.empty(n_filters, window))
        self.dec_filters = nn.Parameter(torch.empty(n_filters, window))
        nn.init.xavier_uniform_(self.enc_filters)
        nn.init.xavier_uniform_(self.dec_filters)

    @property
    def n_filters(self) -> int:
        return self.enc_filters.shape[0]

    @property
    def encoder_basis(self) -> EncoderBasis:
        return EncoderBasis(self.enc_filters, self.hop)

    @property
    def decoder_basis(self) -> DecoderBasis:
        return DecoderBasis(self.dec_filters, self.hop)

    def n_frames(self, t: int) -> int:
        return frame_count(t, self.window, self.hop)

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        """``[..., t] -> [..., N, L]`` as a plain tensor."""
        flat, lead = _as_batch(x)
        z = _analysis(flat, self.enc_filters, self.hop)
        if self.rectify:
            z = F.relu(z)
        return z.reshape(*lead, *z.shape[-2:])

    def decode(self, z: torch.Tensor, length: int) -> torch.Tensor:
        """``[..., N, L] -> [..., length]``."""
        lead = tuple(z.shape[:-2])
        out = _synthesis(z.reshape(-1, *z.shape[-2:]), self.dec_filters, self.hop, length)
        return out.reshape(*lead, length)
