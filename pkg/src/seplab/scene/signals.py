"""Procedural source signals and frame-energy voice activity."""
from __future__ import annotations

import numpy as np
from scipy import signal as sps

from seplab.errors import InvalidInputError

FS = 16000
VAD_FRAME_S = 0.010
VAD_THRESHOLD_DB = -40.0
# interior pauses up to this long are bridged, like a VAD hangover
VAD_MAX_GAP_S = 0.300


def synth_speechlike(seed: int, duration: float, fs: int = FS) -> np.ndarray:
    """Voiced-speech stand-in: harmonics on a drifting f0, syllabic AM and short pauses.

    The first and last 0.3 s never contain a pause. Peak-normalised to 1.
    """
    rng = np.random.default_rng(seed)
    n = int(round(duration * fs))
    t = np.arange(n) / fs

    # f0: log-domain random walk around a speaker-specific base, clipped to 80-300 Hz
    base = rng.uniform(np.log(90), np.log(250))
    knots = max(4, int(duration * 6))
    walk = np.cumsum(rng.normal(0, 0.08, knots))
    log_f0 = np.interp(t, np.linspace(0, duration, knots), base + walk - walk.mean())
    f0 = np.clip(np.exp(log_f0), 80, 300)
    phase = 2 * np.pi * np.cumsum(f0) / fs

    # vowel-like spectral envelope: two resonances that move per syllable
    syll_rate = rng.uniform(2, 8)
    n_syll = int(np.ceil(duration * syll_rate)) + 1
    f1 = np.interp(t, np.arange(n_syll) / syll_rate, rng.uniform(300, 900, n_syll))
    f2 = np.interp(t, np.arange(n_syll) / syll_rate, rng.uniform(900, 2500, n_syll))
    x = np.zeros(n)
    for k in range(1, int(4000 // 80) + 1):
        fk = k * f0
        gain = (np.exp(-((fk - f1) / 250) ** 2) + 0.6 * np.exp(-((fk - f2) / 350) ** 2)
                + 0.05 / k)
        gain = np.where(fk < fs / 2 - 200, gain, 0.0)
        x += gain * np.sin(k * phase + rng.uniform(0, 2 * np.pi))

    # syllabic envelope floored at -20 dB, with per-syllable level jitter
    env = 0.55 - 0.45 * np.cos(2 * np.pi * syll_rate * t + rng.uniform(0, 2 * np.pi))
    level = np.interp(t, np.arange(n_syll) / syll_rate, rng.uniform(0.5, 1.0, n_syll))
    x *= np.maximum(env, 0.1) * level
    x += 0.01 * rng.standard_normal(n) * np.maximum(env, 0.1)

    # pauses: 50-250 ms of silence with 5 ms ramps, away from both ends and each other
    margin = int(0.3 * fs)
    ramp = int(0.005 * fs)
    spacing = int(0.15 * fs)
    gain = np.ones(n)
    pauses = []
    for _ in range(rng.integers(0, max(1, int(duration)) + 2)):
        length = int(rng.uniform(0.05, 0.25) * fs)
        if n - 2 * margin - length <= 0:
            break
        start = int(rng.integers(margin, n - margin - length))
        stop = start + length
        # keep speech between pauses so no silence exceeds 250 ms
        if any(start < b + spacing and a < stop + spacing for a, b in pauses):
            continue
        pauses.append((start, stop))
        gain[start:stop] = 0
        gain[start - ramp:start] = np.minimum(gain[start - ramp:start], np.linspace(1, 0, ramp))
        gain[stop:stop + ramp] = np.minimum(gain[stop:stop + ramp], np.linspace(0, 1, ramp))
    x *= gain

    peak = np.max(np.abs(x))
    return x / peak


def synth_noise(seed: int, duration: float, fs: int = FS) -> np.ndarray:
    """Non-speech background: coloured noise with slow level changes and an optional hum."""
    rng = np.random.default_rng(seed)
    n = int(round(duration * fs))
    white = rng.standard_normal(n)
    cutoff = rng.uniform(300, 6000)
    b, a = sps.butter(2, cutoff / (fs / 2))
    x = sps.lfilter(b, a, white) + rng.uniform(0, 0.3) * white
    t = np.arange(n) / fs
    x *= 1 + 0.5 * np.sin(2 * np.pi * rng.uniform(0.1, 1.0) * t + rng.uniform(0, 2 * np.pi))
    if rng.random() < 0.5:
        x += rng.uniform(0.1, 0.5) * np.std(x) * np.sin(2 * np.pi * rng.choice([50, 60, 120]) * t)
    return x / np.max(np.abs(x))


def frame_activity(x: np.ndarray, fs: int = FS, frame_s: float = VAD_FRAME_S,
                   threshold_db: float = VAD_THRESHOLD_DB,
                   max_gap_s: float = VAD_MAX_GAP_S) -> np.ndarray:
    """Per-frame activity: frame energy within ``threshold_db`` of the loudest frame.

    Inactive runs of at most ``max_gap_s`` between two active frames are
    bridged. Trailing samples that do not fill a frame are treated as a frame.
    """
    x = np.asarray(x, dtype=float)
    hop = int(round(frame_s * fs))
    n_frames = int(np.ceil(len(x) / hop))
    padded = np.zeros(n_frames * hop)
    padded[: len(x)] = x
    energy = (padded.reshape(n_frames, hop) ** 2).sum(1)
    peak = energy.max()
    if peak <= 0:
        return np.zeros(n_frames, dtype=bool)
    active = energy > peak * 10 ** (threshold_db / 10)
    max_gap = int(round(max_gap_s / frame_s))
    idx = np.nonzero(active)[0]
    if max_gap and idx.size > 1:
        gaps = np.diff(idx) - 1
        for start, gap in zip(idx[:-1], gaps):
            if 0 < gap <= max_gap:
                active[start + 1:start + 1 + gap] = True
    return active


def activity_mask(x: np.ndarray, fs: int = FS, **kw) -> np.ndarray:
    """Sample-level activity mask of ``len(x)`` samples."""
    hop = int(round(kw.get("frame_s", VAD_FRAME_S) * fs))
    frames = frame_activity(x, fs, **kw)
    return np.repeat(frames, hop)[: len(x)]


def measure_overlap(a1: np.ndarray, a2: np.ndarray) -> float:
    """Fraction of samples where both activity masks are set."""
    a1 = np.asarray(a1, dtype=bool)
    a2 = np.asarray(a2, dtype=bool)
    if a1.shape != a2.shape or a1.size == 0:
        raise InvalidInputError(f"activity masks must be non-empty and equal length: "
                                f"{a1.shape} vs {a2.shape}")
    return float(np.count_nonzero(a1 & a2) / a1.size)


def normalized_xcorr_peak(a: np.ndarray, b: np.ndarray) -> float:
    """Largest absolute normalised cross-correlation over all lags."""
    xc = sps.correlate(a, b, mode="full", method="fft")
    return float(np.max(np.abs(xc)) / (np.linalg.norm(a) * np.linalg.norm(b)))
