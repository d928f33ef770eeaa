"""Per-utterance SI-SDR evaluation over a manifest split."""
from __future__ import annotations

import dataclasses
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from seplab.losses import neg_si_sdr, pit_assign, si_sdr_db
from seplab.scene.dataset import load_utterance, read_manifest


@dataclass
class EvalRecord:
    id: str
    overlap: float
    si_sdr: list[float]
    mixture_si_sdr: float
    improvement: float
    config_id: str = ""

    @property
    def mean_si_sdr(self) -> float:
        return float(np.mean(self.si_sdr))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def make_record(uid: str, overlap: float, ests: np.ndarray, mixture: np.ndarray,
                targets: np.ndarray, config_id: str = "") -> EvalRecord:
    """PIT-align ``ests [C, t]`` to ``targets`` by SI-SDR and score against the mixture baseline."""
    ests_t = torch.as_tensor(np.asarray(ests, dtype=np.float64))
    refs_t = torch.as_tensor(np.asarray(targets, dtype=np.float64))
    mix_t = torch.as_tensor(np.asarray(mixture, dtype=np.float64))
    perm, _ = pit_assign(ests_t, refs_t, neg_si_sdr)
    per_source = si_sdr_db(ests_t[list(perm)], refs_t).tolist()
    baseline = si_sdr_db(mix_t.expand_as(refs_t), refs_t).mean().item()
    return EvalRecord(id=uid, overlap=float(overlap), si_sdr=per_source, mixture_si_sdr=baseline,
                      improvement=float(np.mean(per_source)) - baseline, config_id=config_id)


def model_separator(model) -> Callable[[np.ndarray], np.ndarray]:
    """Wrap a :class:`SeparationModel` as ``mixture [t] -> estimates [C, t]``."""
    dtype = next(model.parameters()).dtype

    def separate(mixture: np.ndarray) -> np.ndarray:
        model.eval()
        with torch.no_grad():
            y = torch.as_tensor(np.asarray(mixture), dtype=dtype).unsqueeze(0)
            return model(y)[0].double().numpy()

    return separate


def evaluate(model, manifest_path, split: str = "test", config_id: str = "",
             jobs: int = 1) -> list[EvalRecord]:
    """One :class:`EvalRecord` per manifest line of ``split``, in manifest order.

    ``model`` is a :class:`SeparationModel` or any callable ``mixture -> [C, t]``.
    """
    separate = model if not isinstance(model, torch.nn.Module) else model_separator(model)
    entries = read_manifest(manifest_path, split)

    def one(entry):
        mixture, targets = load_utterance(manifest_path, entry)
        return make_record(entry["id"], entry["overlap"], separate(mixture), mixture, targets,
                           config_id)

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            return list(pool.map(one, entries))
    return [one(e) for e in entries]


def write_records(records: list[EvalRecord], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")
    return path


def read_records(path) -> list[EvalRecord]:
    with open(path) as fh:
        return [EvalRecord(**json.loads(line)) for line in fh if line.strip()]
