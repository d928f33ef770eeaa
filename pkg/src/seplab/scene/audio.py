"""Mono WAV reading and writing at a fixed sample rate."""
from __future__ import annotations

from math import gcd
from pathlib import Path

import numpy as np
from scipy import signal as sps
from scipy.io import wavfile

from seplab.errors import InvalidInputError


def read_wav(path, fs: int | None = None) -> np.ndarray:
    """Float samples in [-1, 1]; first channel if multichannel; resampled to ``fs`` if given."""
    rate, data = wavfile.read(path)
    if data.ndim > 1:
        data = data[:, 0]
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        x = data.astype(np.float64) / 2147483648.0
    elif data.dtype == np.uint8:
        x = (data.astype(np.float64) - 128) / 128.0
    elif np.issubdtype(data.dtype, np.floating):
        x = data.astype(np.float64)
    else:
        raise InvalidInputError(f"unsupported WAV sample type {data.dtype} in {path}")
    if fs is not None and rate != fs:
        g = gcd(int(rate), int(fs))
        x = sps.resample_poly(x, fs // g, rate // g)
    return x


def write_wav(path, x: np.ndarray, fs: int, subtype: str = "float32") -> Path:
    """Write a mono WAV as 32-bit float (default) or 16-bit PCM."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    x = np.asarray(x)
    if subtype == "float32":
        wavfile.write(path, fs, x.astype(np.float32))
    elif subtype == "pcm16":
        wavfile.write(path, fs, np.clip(np.round(x * 32767), -32768, 32767).astype(np.int16))
    else:
        raise InvalidInputError(f"unknown WAV subtype {subtype!r}")
    return path
