"""Dual-path chunking and the DPRNN block stack."""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from seplab.errors import ConfigError, InvariantError


@dataclass
class ChunkedFeature:
    """50%-overlapping chunks ``data`` of shape ``[B, D, K, S]``.

    ``pad_frames`` is the zero padding appended after the last frame; a fixed
    half-chunk is always prepended.
    """

    data: torch.Tensor
    pad_frames: int
    length: int

    @property
    def chunk_len(self) -> int:
        return self.data.shape[-2]

    @property
    def n_chunks(self) -> int:
        return self.data.shape[-1]


def segment(feature: torch.Tensor, chunk_len: int) -> ChunkedFeature:
    """Split ``[B, D, L]`` into ``S = ceil(L / (chunk_len/2)) + 1`` half-overlapping chunks."""
    if chunk_len < 2 or chunk_len % 2:
        raise ConfigError(f"chunk_len must be an even integer >= 2, got {chunk_len}")
    length = feature.shape[-1]
    if length < 1:
        raise InvariantError("cannot segment an empty feature")
    hop = chunk_len // 2
    n_chunks = math.ceil(length / hop) + 1
    pad_frames = (n_chunks + 1) * hop - hop - length
    padded = F.pad(feature, (hop, pad_frames))
    # [B, D, S, K] -> [B, D, K, S]
    chunks = padded.unfold(-1, chunk_len, hop).transpose(-1, -2)
    return ChunkedFeature(chunks.contiguous(), pad_frames, length)


def merge(chunks: ChunkedFeature) -> torch.Tensor:
    """Inverse of :func:`segment`: overlap-add, divide by the overlap count, strip padding."""
    data = chunks.data
    b, d, k, s = data.shape
    hop = k // 2
    total = (s + 1) * hop
    if total != hop + chunks.length + chunks.pad_frames:
        raise InvariantError(
            f"pad_frames={chunks.pad_frames} inconsistent with {s} chunks of {k} "
            f"for length {chunks.length}"
        )
    cols = data.reshape(b, d * k, s)
    summed = F.fold(cols, output_size=(1, total), kernel_size=(1, k), stride=(1, hop))
    ones = torch.ones(1, k, s, dtype=data.dtype, device=data.device)
    count = F.fold(ones, output_size=(1, total), kernel_size=(1, k), stride=(1, hop))
    out = (summed / count.clamp(min=1)).reshape(b, d, total)
    return out[..., hop:hop + chunks.length]


class GlobalLayerNorm(nn.GroupNorm):
    """Normalisation over channels and all frames of each example."""

    def __init__(self, channels: int, eps: float = 1e-8):
        super().__init__(1, channels, eps=eps)


class _PathRNN(nn.Module):
    def __init__(self, dim: int, hidden: int, bidirectional: bool):
        super().__init__()
        self.rnn = nn.LSTM(dim, hidden, batch_first=True, bidirectional=bidirectional)
        self.proj = nn.Linear(hidden * (2 if bidirectional else 1), dim)
        self.norm = GlobalLayerNorm(dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # x: [B, D, K, S], recurrence runs along K
        b, d, k, s = x.shape
        seq = x.permute(0, 3, 2, 1).reshape(b * s, k, d)
        out, _ = self.rnn(seq)
        out = self.proj(out).reshape(b, s, k, d).permute(0, 3, 2, 1)
        return x + self.norm(out)


class DPRNNBlock(nn.Module):
    """Intra-chunk then inter-chunk recurrent pass, each with a residual connection."""

    def __init__(self, dim: int = 64, hidden: int = 128, bidirectional_inter: bool = True):
        super().__init__()
        self.dim = dim
        self.intra = _PathRNN(dim, hidden, bidirectional=True)
        self.inter = _PathRNN(dim, hidden, bidirectional=bidirectional_inter)

    def forward(self, chunks: torch.Tensor) -> torch.Tensor:
        if chunks.dim() != 4 or chunks.shape[1] != self.dim:
            raise InvariantError(
                f"expected [B, {self.dim}, K, S] chunks, got {tuple(chunks.shape)}"
            )
        x = self.intra(chunks)
        x = self.inter(x.transpose(-1, -2)).transpose(-1, -2)
        return x

    def zero_projections(self):
        """Zero every output projection; the block then passes its input through unchanged."""
        with torch.no_grad():
            for path in (self.intra, self.inter):
                path.proj.weight.zero_()
                path.proj.bias.zero_()


def dprnn_block(chunks: ChunkedFeature, block: DPRNNBlock) -> ChunkedFeature:
    return ChunkedFeature(block(chunks.data), chunks.pad_frames, chunks.length)


class DPRNNStack(nn.Module):
    """``segment -> blocks -> merge`` over ``[B, D, L]``. Zero blocks is the identity."""

    def __init__(self, n_blocks: int, dim: int = 64, hidden: int = 128, chunk_len: int = 100,
                 bidirectional_inter: bool = True):
        super().__init__()
        if chunk_len < 2 or chunk_len % 2:
            raise ConfigError(f"chunk_len must be an even integer >= 2, got {chunk_len}")
        self.chunk_len = chunk_len
        self.blocks = nn.ModuleList(
            DPRNNBlock(dim, hidden, bidirectional_inter) for _ in range(n_blocks)
        )

    def __len__(self):
        return len(self.blocks)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if not len(self.blocks):
            return x
        chunks = segment(x, self.chunk_len)
        for block in self.blocks:
            chunks = dprnn_block(chunks, block)
        return merge(chunks)


def run_stack(feature: torch.Tensor, stack: DPRNNStack) -> torch.Tensor:
    return stack(feature)
