"""Scene sampling and two-speaker reverberant mixing."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np
from scipy import signal as sps

from seplab.errors import InfeasibleSceneError, InvalidInputError
from seplab.scene import signals
from seplab.scene.rir import decay_matched_absorption, sabine_absorption, simulate_rir

FS = signals.FS
WALL_MARGIN = 0.3
OVERLAP_TOL = 0.02
MIX_PEAK = 0.9


@dataclass(frozen=True)
class RoomSpec:
    length: float
    width: float
    height: float
    t60: float
    src_positions: tuple[tuple[float, float, float], ...]
    noise_position: tuple[float, float, float]
    mic_position: tuple[float, float, float]

    @property
    def dims(self) -> tuple[float, float, float]:
        return self.length, self.width, self.height

    def is_feasible(self) -> bool:
        try:
            sabine_absorption(self.dims, self.t60)
        except InfeasibleSceneError:
            return False
        return True


@dataclass(frozen=True)
class SceneSpec:
    seed: int
    overlap_ratio_target: float
    rel_snr_db: float
    noise_snr_db: float
    room: RoomSpec
    utterance_len: int = 4 * FS
    source_seeds: tuple[int, int] = (0, 1)
    noise_seed: int = 2

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class MixtureExample:
    mixture: np.ndarray
    targets: np.ndarray
    noise_image: np.ndarray
    scene: SceneSpec
    measured_overlap: float
    dry_sources: np.ndarray = field(repr=False)
    segment_len: int = 0


class SourceProvider(Protocol):
    def speech(self, seed: int, duration: float) -> np.ndarray: ...

    def noise(self, seed: int, duration: float) -> np.ndarray: ...


class SynthSources:
    """Procedural speech-like sources and synthetic noise."""

    def speech(self, seed: int, duration: float) -> np.ndarray:
        return signals.synth_speechlike(seed, duration)

    def noise(self, seed: int, duration: float) -> np.ndarray:
        return signals.synth_noise(seed, duration)


class WavDirSources:
    """Mono WAV files from a speech directory (and optionally a noise directory).

    Files are drawn by seed; short files are extended with the next files in
    sorted order. Audio is resampled to 16 kHz.
    """

    def __init__(self, speech_dir, noise_dir=None):
        from seplab.scene.audio import read_wav

        self._read = read_wav
        self.speech_files = sorted(Path(speech_dir).rglob("*.wav"))
        if not self.speech_files:
            raise InvalidInputError(f"no .wav files under {speech_dir}")
        self.noise_files = sorted(Path(noise_dir).rglob("*.wav")) if noise_dir else []

    def _draw(self, files, seed, duration):
        rng = np.random.default_rng(seed)
        need = int(round(duration * FS))
        start = int(rng.integers(len(files)))
        parts, total = [], 0
        for k in range(len(files)):
            x = self._read(files[(start + k) % len(files)], FS)
            parts.append(x)
            total += len(x)
            if total >= need:
                break
        return np.concatenate(parts)

    def speech(self, seed, duration):
        return self._draw(self.speech_files, seed, duration)

    def noise(self, seed, duration):
        if not self.noise_files:
            return signals.synth_noise(seed, duration)
        x = self._draw(self.noise_files, seed, duration)
        need = int(round(duration * FS))
        return np.resize(x, need) if len(x) < need else x[:need]


def derive_seed(*entropy: int) -> int:
    return int(np.random.SeedSequence(list(entropy)).generate_state(1)[0])


def _inside(rng, dims) -> tuple[float, float, float]:
    # uniform inside the room, re-drawn until every wall is at least WALL_MARGIN away
    while True:
        p = rng.uniform(0, dims)
        if np.all(p >= WALL_MARGIN) and np.all(p <= np.asarray(dims) - WALL_MARGIN):
            return tuple(float(v) for v in p)


def sample_scene(seed: int, utterance_len: int = 4 * FS) -> SceneSpec:
    """Draw every scene parameter uniformly from its range; pure function of ``seed``."""
    if utterance_len % int(signals.VAD_FRAME_S * FS):
        raise InvalidInputError("utterance_len must be a whole number of 10 ms frames")
    rng = np.random.default_rng(seed)
    overlap = float(rng.uniform(0, 1))
    rel_snr = float(rng.uniform(0, 5))
    noise_snr = float(rng.uniform(10, 20))
    dims = (float(rng.uniform(3, 10)), float(rng.uniform(3, 10)), float(rng.uniform(2.5, 4)))
    t60 = float(rng.uniform(0.1, 0.5))
    room = RoomSpec(
        length=dims[0], width=dims[1], height=dims[2], t60=t60,
        src_positions=(_inside(rng, dims), _inside(rng, dims)),
        noise_position=_inside(rng, dims),
        mic_position=_inside(rng, dims),
    )
    seeds = rng.integers(0, 2**31 - 1, 3)
    return SceneSpec(seed=seed, overlap_ratio_target=overlap, rel_snr_db=rel_snr,
                     noise_snr_db=noise_snr, room=room, utterance_len=utterance_len,
                     source_seeds=(int(seeds[0]), int(seeds[1])), noise_seed=int(seeds[2]))


def sample_feasible_scene(seed: int, utterance_len: int = 4 * FS,
                          max_attempts: int = 100) -> SceneSpec:
    """First feasible scene among ``seed`` and up to ``max_attempts - 1`` derived seeds."""
    for attempt in range(max_attempts):
        s = seed if attempt == 0 else derive_seed(seed, attempt)
        scene = sample_scene(s, utterance_len)
        if scene.room.is_feasible():
            return scene
    raise InfeasibleSceneError(f"no feasible room after {max_attempts} attempts from seed {seed}")


def _frame() -> int:
    return int(round(signals.VAD_FRAME_S * FS))


def _pick_segment(x: np.ndarray, length: int, rng) -> np.ndarray:
    """A frame-aligned excerpt of ``length`` samples whose first and last frames are active."""
    frame = _frame()
    act = signals.frame_activity(x, max_gap_s=0)
    n_len = length // frame
    n_frames = len(x) // frame
    if n_frames < n_len or n_len == 0:
        raise InvalidInputError(f"source of {len(x)} samples is shorter than {length}")
    starts = np.arange(n_frames - n_len + 1)
    ok = starts[act[starts] & act[starts + n_len - 1]]
    if ok.size == 0:
        raise InvalidInputError("no excerpt starts and ends on active speech")
    f = int(rng.choice(ok))
    return x[f * frame:f * frame + length]


def _power(x, region=slice(None)):
    return float(np.mean(np.asarray(x, dtype=float)[region] ** 2))


def mix_scene(spec: SceneSpec, speech, noise: np.ndarray) -> MixtureExample:
    """Place, scale, reverberate and sum two speakers plus noise for one utterance."""
    T = spec.utterance_len
    frame = _frame()
    rng = np.random.default_rng(derive_seed(spec.seed, 1))
    if len(speech) != 2:
        raise InvalidInputError("mix_scene expects exactly two speech signals")
    for i, s in enumerate(speech):
        if not np.any(s):
            raise InvalidInputError(f"speech source {i} is silent")
    if not np.any(noise):
        raise InvalidInputError("noise source is silent")

    # each speaker spans (1 + r) / 2 of the window; speaker 2 is shifted to the end
    seg = int(frame * round(T * (1 + spec.overlap_ratio_target) / 2 / frame))
    seg = min(max(seg, frame), T)
    dry = np.zeros((2, T))
    dry[0, :seg] = _pick_segment(np.asarray(speech[0], float), seg, rng)
    dry[1, T - seg:] = _pick_segment(np.asarray(speech[1], float), seg, rng)

    overlap = slice(T - seg, seg)
    if seg * 2 - T >= frame:
        p1, p2 = _power(dry[0], overlap), _power(dry[1], overlap)
    else:
        p1, p2 = _power(dry[0], slice(0, seg)), _power(dry[1], slice(T - seg, T))
    dry[1] *= np.sqrt(p1 / (p2 * 10 ** (spec.rel_snr_db / 10)))

    room = spec.room
    # walls are shared, so the absorption is fitted once on the first source
    alpha = decay_matched_absorption(room.dims, room.t60, room.src_positions[0],
                                     room.mic_position, FS)
    images = np.stack([
        sps.fftconvolve(dry[i], simulate_rir(room.dims, room.t60, room.src_positions[i],
                                             room.mic_position, FS, absorption=alpha))[:T]
        for i in range(2)
    ])
    noise = np.resize(np.asarray(noise, float), T)
    noise_img = sps.fftconvolve(noise, simulate_rir(room.dims, room.t60, room.noise_position,
                                                    room.mic_position, FS, absorption=alpha))[:T]
    speech_power = _power(images.sum(0))
    noise_img *= np.sqrt(speech_power / (_power(noise_img) * 10 ** (spec.noise_snr_db / 10)))

    gain = MIX_PEAK / np.max(np.abs(images.sum(0) + noise_img))
    targets = (images * gain).astype(np.float32)
    noise_img = (noise_img * gain).astype(np.float32)
    mixture = targets[0].copy()
    for k in range(1, len(targets)):
        mixture += targets[k]
    mixture += noise_img

    measured = signals.measure_overlap(signals.activity_mask(dry[0]),
                                       signals.activity_mask(dry[1]))
    return MixtureExample(mixture=mixture, targets=targets, noise_image=noise_img, scene=spec,
                          measured_overlap=measured, dry_sources=dry * gain,
                          segment_len=seg)


def simulate_example(seed: int, utterance_len: int = 4 * FS,
                     sources: SourceProvider | None = None) -> MixtureExample:
    """Re-create one utterance bit-exactly from its (feasible) scene seed."""
    sources = sources or SynthSources()
    spec = sample_scene(seed, utterance_len)
    if not spec.room.is_feasible():
        raise InfeasibleSceneError(f"scene seed {seed} is not feasible")
    duration = utterance_len / FS + 1.0
    speech = [sources.speech(s, duration) for s in spec.source_seeds]
    noise = sources.noise(spec.noise_seed, utterance_len / FS)
    return mix_scene(spec, speech, noise)


def scene_errors(ex: MixtureExample) -> dict:
    """Deviations of an example from its scene post-conditions."""
    spec = ex.scene
    T = spec.utterance_len
    recon = ex.targets[0].copy()
    for k in range(1, len(ex.targets)):
        recon += ex.targets[k]
    recon += ex.noise_image
    dry = ex.dry_sources
    seg = ex.segment_len
    overlap = slice(T - seg, seg)
    frame = _frame()
    if 2 * seg - T >= frame:
        ratio = _power(dry[0], overlap) / _power(dry[1], overlap)
    else:
        ratio = _power(dry[0], slice(0, seg)) / _power(dry[1], slice(T - seg, T))
    speech = ex.targets.astype(float).sum(0)
    noise_ratio = _power(speech) / _power(ex.noise_image)
    return {
        "mixture_identity": float(np.max(np.abs(recon - ex.mixture))),
        "overlap": abs(ex.measured_overlap - spec.overlap_ratio_target),
        "rel_snr": abs(ratio / 10 ** (spec.rel_snr_db / 10) - 1),
        "noise_snr": abs(noise_ratio / 10 ** (spec.noise_snr_db / 10) - 1),
    }
