"""Shoebox room impulse responses by the image-source method.

Walls share one absorption coefficient. Feasibility of a (room, T60) pair is
judged with Sabine's formula (absorption above 1 is rejected). The coefficient
actually used is fitted numerically so that the simulated response decays by
60 dB after T60: closed forms (Sabine, Eyring) assume a diffuse, incoherently
summed field, whereas here all image amplitudes are positive and late taps
collect many images each, so the sampled tail decays markedly slower than
either formula predicts. Every image is placed at its rounded sample delay with
amplitude ``beta**n_reflections / (4 pi d)``.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.optimize import brentq

from seplab.errors import InfeasibleSceneError, InvalidInputError

SPEED_OF_SOUND = 343.0
SABINE_CONSTANT = 24 * math.log(10) / SPEED_OF_SOUND  # ~0.161 s/m


def sabine_absorption(dims, t60: float) -> float:
    """Uniform wall absorption that gives ``t60`` under Sabine's formula."""
    lx, ly, lz = dims
    volume = lx * ly * lz
    surface = 2 * (lx * ly + lx * lz + ly * lz)
    if t60 <= 0:
        raise InvalidInputError(f"t60 must be positive, got {t60}")
    alpha = SABINE_CONSTANT * volume / (surface * t60)
    if alpha > 1:
        raise InfeasibleSceneError(
            f"t60={t60:.3f}s is too short for a {lx:.2f}x{ly:.2f}x{lz:.2f} m room "
            f"(Sabine absorption {alpha:.3f} > 1)"
        )
    return alpha


def _axis_images(src: float, mic: float, size: float, max_dist: float):
    """Image offsets along one axis and their reflection counts."""
    n_max = int(math.ceil(max_dist / (2 * size))) + 1
    n = np.arange(-n_max, n_max + 1)
    offsets, counts = [], []
    for q in (0, 1):
        pos = (1 - 2 * q) * src + 2 * n * size
        offsets.append(pos - mic)
        counts.append(np.abs(n - q) + np.abs(n))
    return np.concatenate(offsets), np.concatenate(counts)


def _images(dims, src, mic, max_dist: float):
    """Yield (distance, reflection count) arrays, one z image layer at a time."""
    ox, cx = _axis_images(src[0], mic[0], dims[0], max_dist)
    oy, cy = _axis_images(src[1], mic[1], dims[1], max_dist)
    oz, cz = _axis_images(src[2], mic[2], dims[2], max_dist)
    dxy = ox[:, None] ** 2 + oy[None, :] ** 2
    cxy = cx[:, None] + cy[None, :]
    for k in range(len(oz)):
        yield np.sqrt(dxy + oz[k] ** 2), cxy + cz[k]


def _check_geometry(dims, src, mic):
    dims = np.asarray(dims, dtype=float)
    src = np.asarray(src, dtype=float)
    mic = np.asarray(mic, dtype=float)
    for name, p in (("source", src), ("microphone", mic)):
        if np.any(p <= 0) or np.any(p >= dims):
            raise InvalidInputError(f"{name} position {p.tolist()} is not inside the room")
    return dims, src, mic


def decay_matched_absorption(dims, t60: float, src, mic, fs: int = 16000,
                             c: float = SPEED_OF_SOUND, horizon: float = 1.25) -> float:
    """Uniform absorption whose simulated response from ``src`` to ``mic`` decays by 60 dB at ``t60``.

    Each tap is a polynomial in ``beta``, so the taps up to ``horizon * t60`` are
    tabulated once per reflection count and the Schroeder level at ``t60`` is
    solved for ``log beta``. Raises :class:`InfeasibleSceneError` when Sabine's
    formula already needs absorption above 1.
    """
    sabine_absorption(dims, t60)
    dims, src, mic = _check_geometry(dims, src, mic)
    n_taps = int(math.ceil(t60 * fs))
    n_total = int(math.ceil(horizon * n_taps))
    max_dist = n_total * c / fs
    n_max = int(sum(2 * math.ceil(max_dist / (2 * d)) + 3 for d in dims))
    table = np.zeros(n_total * n_max)
    for dist, refl in _images(dims, src, mic, max_dist):
        delay = np.rint(dist * fs / c).astype(np.int64)
        keep = delay < n_total
        table += np.bincount(delay[keep] * n_max + refl[keep], 1 / (4 * np.pi * dist[keep]),
                             n_total * n_max)
    table = table.reshape(n_total, n_max)
    orders = np.nonzero(table.any(axis=0))[0]
    table = table[:, orders]

    def level_at_t60(log_beta):
        energy = np.square(table @ np.exp(log_beta * orders))
        return math.log(max(energy[n_taps:].sum() / energy.sum(), 1e-300)) + 6 * math.log(10)

    log_beta = brentq(level_at_t60, -20.0, -1e-9, xtol=1e-10)
    return -math.expm1(2 * log_beta)


def simulate_rir(dims, t60: float, src, mic, fs: int = 16000, absorption: float | None = None,
                 c: float = SPEED_OF_SOUND, n_taps: int | None = None) -> np.ndarray:
    """Impulse response from ``src`` to ``mic`` in a ``dims`` shoebox, ``ceil(t60*fs)`` taps.

    Raises :class:`InfeasibleSceneError` when the room cannot reach ``t60``.
    ``absorption`` overrides the fit from :func:`decay_matched_absorption` (pass
    one value for every source in a room); ``absorption=1`` gives the free-field
    direct path only. ``n_taps`` lengthens or shortens the response.
    """
    dims, src, mic = _check_geometry(dims, src, mic)
    if absorption is None:
        alpha = decay_matched_absorption(dims, t60, src, mic, fs, c)
    else:
        alpha = float(absorption)
    if not 0 <= alpha <= 1:
        raise InvalidInputError(f"absorption must lie in [0, 1], got {alpha}")
    beta = math.sqrt(1 - alpha)
    n_taps = int(math.ceil(t60 * fs)) if n_taps is None else int(n_taps)
    max_dist = n_taps * c / fs

    rir = np.zeros(n_taps)
    for dist, refl in _images(dims, src, mic, max_dist):
        delay = np.rint(dist * fs / c).astype(np.int64)
        keep = delay < n_taps
        if not keep.any():
            continue
        # 0.0 ** 0 == 1 keeps the direct path when beta == 0
        amp = np.power(beta, refl[keep]) / (4 * np.pi * dist[keep])
        np.add.at(rir, delay[keep], amp)
    return rir


def schroeder_decay_db(rir: np.ndarray) -> np.ndarray:
    """Backward-integrated energy decay curve in dB, normalised to 0 dB at t=0."""
    energy = np.cumsum(rir[::-1] ** 2)[::-1]
    with np.errstate(divide="ignore"):
        return 10 * np.log10(energy / energy[0])


def decay_time(rir: np.ndarray, fs: int, level_db: float = -60.0) -> float:
    """Seconds until the Schroeder curve first falls to ``level_db``."""
    edc = schroeder_decay_db(rir)
    below = np.nonzero(edc <= level_db)[0]
    return (below[0] if below.size else len(rir)) / fs
