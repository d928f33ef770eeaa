"""Dataset generation: simulate utterances, write WAVs and a JSON-lines manifest."""
from __future__ import annotations

import dataclasses
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from seplab.errors import ConfigError, InvalidInputError
from seplab.scene.audio import read_wav, write_wav
from seplab.scene.mixing import (
    FS,
    MixtureExample,
    SynthSources,
    WavDirSources,
    derive_seed,
    sample_feasible_scene,
    simulate_example,
)

log = logging.getLogger(__name__)

SPLITS = ("train", "valid", "test")
MANIFEST_NAME = "manifest.jsonl"
STAMP_NAME = "dataset.json"


@dataclass
class DatasetConfig:
    n_train: int = 200
    n_valid: int = 50
    n_test: int = 50
    utterance_seconds: float = 4.0
    seed: int = 0
    source: str = "synth"
    speech_dir: str | None = None
    noise_dir: str | None = None
    wav_subtype: str = "float32"

    def validate(self) -> "DatasetConfig":
        for name in ("n_train", "n_valid", "n_test"):
            if getattr(self, name) < 0:
                raise ConfigError(f"dataset.{name} must be >= 0")
        if self.utterance_seconds <= 0:
            raise ConfigError("dataset.utterance_seconds must be positive")
        if round(self.utterance_seconds * 100) != self.utterance_seconds * 100:
            raise ConfigError("dataset.utterance_seconds must be a multiple of 10 ms")
        if self.source not in ("synth", "wav_dir"):
            raise ConfigError(f"dataset.source must be 'synth' or 'wav_dir', got {self.source!r}")
        if self.source == "wav_dir" and not self.speech_dir:
            raise ConfigError("dataset.speech_dir is required when source is 'wav_dir'")
        if self.wav_subtype not in ("float32", "pcm16"):
            raise ConfigError("dataset.wav_subtype must be 'float32' or 'pcm16'")
        return self

    @property
    def utterance_len(self) -> int:
        return int(round(self.utterance_seconds * FS))

    def counts(self) -> dict[str, int]:
        return {"train": self.n_train, "valid": self.n_valid, "test": self.n_test}

    def sources(self):
        if self.source == "wav_dir":
            return WavDirSources(self.speech_dir, self.noise_dir)
        return SynthSources()


def utterance_seed(root_seed: int, split: str, index: int) -> int:
    return derive_seed(root_seed, SPLITS.index(split), index)


def _write_one(job):
    cfg, split, index, out_dir = job
    base = utterance_seed(cfg.seed, split, index)
    scene = sample_feasible_scene(base, cfg.utterance_len)
    ex = simulate_example(scene.seed, cfg.utterance_len, cfg.sources())
    uid = f"{split}-{index:05d}"
    rel = Path(split)
    paths = {
        "mixture_path": rel / f"{uid}_mix.wav",
        "target_paths": [rel / f"{uid}_s{k + 1}.wav" for k in range(len(ex.targets))],
        "noise_path": rel / f"{uid}_noise.wav",
    }
    write_wav(out_dir / paths["mixture_path"], ex.mixture, FS, cfg.wav_subtype)
    for p, x in zip(paths["target_paths"], ex.targets):
        write_wav(out_dir / p, x, FS, cfg.wav_subtype)
    write_wav(out_dir / paths["noise_path"], ex.noise_image, FS, cfg.wav_subtype)
    return manifest_entry(uid, split, ex, paths)


def manifest_entry(uid: str, split: str, ex: MixtureExample, paths: dict) -> dict:
    room = ex.scene.room
    return {
        "id": uid,
        "seed": ex.scene.seed,
        "mixture_path": str(paths["mixture_path"]),
        "target_paths": [str(p) for p in paths["target_paths"]],
        "noise_path": str(paths["noise_path"]),
        "overlap": ex.measured_overlap,
        "rel_snr_db": ex.scene.rel_snr_db,
        "noise_snr_db": ex.scene.noise_snr_db,
        "room": {"l": room.length, "w": room.width, "h": room.height, "t60": room.t60},
        "split": split,
    }


def generate_dataset(config: DatasetConfig, out_dir, jobs: int = 1, force: bool = False) -> Path:
    """Simulate every split into ``out_dir`` and return the manifest path.

    An existing dataset produced from the same config is reused unless ``force``.
    """
    config.validate()
    out_dir = Path(out_dir)
    manifest = out_dir / MANIFEST_NAME
    stamp = out_dir / STAMP_NAME
    echo = dataclasses.asdict(config)
    if not force and manifest.exists() and stamp.exists():
        if json.loads(stamp.read_text()) == echo:
            log.info("dataset in %s is up to date", out_dir)
            return manifest
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        probe = out_dir / ".write-test"
        probe.touch()
        probe.unlink()
    except OSError as exc:
        raise OSError(f"cannot write dataset to {out_dir}: {exc}") from exc

    work = [(config, split, i, out_dir) for split in SPLITS for i in range(config.counts()[split])]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            entries = list(pool.map(_write_one, work, chunksize=4))
    else:
        entries = [_write_one(job) for job in work]
    tmp = manifest.with_suffix(".tmp")
    with open(tmp, "w") as fh:
        for entry in entries:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
    tmp.replace(manifest)
    stamp.write_text(json.dumps(echo, sort_keys=True, indent=2))
    log.info("wrote %d utterances to %s", len(entries), out_dir)
    return manifest


def read_manifest(path, split: str | None = None) -> list[dict]:
    lines = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                entry = json.loads(line)
                if split is None or entry["split"] == split:
                    lines.append(entry)
    return lines


def load_utterance(manifest_path, entry: dict) -> tuple[np.ndarray, np.ndarray]:
    """``(mixture [t], targets [C, t])`` as float32 arrays."""
    root = Path(manifest_path).parent
    mix = read_wav(root / entry["mixture_path"]).astype(np.float32)
    targets = np.stack([read_wav(root / p).astype(np.float32)
                        for p in entry["target_paths"]])
    if targets.shape[-1] != mix.shape[-1]:
        raise InvalidInputError(f"target length mismatch in {entry['id']}")
    return mix, targets


class ManifestDataset:
    """In-memory utterances of one manifest split."""

    def __init__(self, manifest_path, split: str):
        self.manifest_path = Path(manifest_path)
        self.entries = read_manifest(manifest_path, split)
        loaded = [load_utterance(manifest_path, e) for e in self.entries]
        self.mixtures = np.stack([m for m, _ in loaded]) if loaded else np.zeros((0, 0), np.float32)
        self.targets = np.stack([t for _, t in loaded]) if loaded else np.zeros((0, 0, 0), np.float32)

    def __len__(self):
        return len(self.entries)
