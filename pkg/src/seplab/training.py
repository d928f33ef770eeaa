"""Training recipe: Adam, stepwise learning-rate decay, norm clipping, early stopping."""
from __future__ import annotations

import copy
import dataclasses
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from seplab.errors import ConfigError, TrainingError
from seplab.losses import a2t_loss, pit_assign, neg_si_sdr, reorder, separation_loss, si_sdr_db

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr0: float = 1e-3
    decay: float = 0.98
    decay_every: int = 2
    clip_norm: float = 5.0
    max_epochs: int = 100
    patience: int = 10
    a2t_weight: float = 0.0
    pit_mode: str = "utterance_pit"
    batch_size: int = 4
    seed: int = 0

    def validate(self) -> "TrainConfig":
        for name in ("lr0", "decay", "clip_norm"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"train.{name} must be positive")
        for name in ("decay_every", "max_epochs", "patience", "batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"train.{name} must be >= 1")
        if self.patience > self.max_epochs:
            raise ConfigError("train.patience must not exceed train.max_epochs")
        if self.a2t_weight < 0:
            raise ConfigError("train.a2t_weight must be >= 0")
        if self.pit_mode != "utterance_pit":
            raise ConfigError(f"unsupported pit_mode {self.pit_mode!r}")
        return self


def lr_schedule(epoch: int, cfg: TrainConfig) -> float:
    """``lr0 * decay ** floor(epoch / decay_every)`` for a 0-indexed epoch."""
    return cfg.lr0 * cfg.decay ** (epoch // cfg.decay_every)


def clip_gradients(parameters, max_norm: float) -> float:
    """Rescale gradients in place so their global L2 norm is at most ``max_norm``.

    Returns the norm before clipping.
    """
    grads = [p.grad for p in parameters if p.grad is not None]
    if not grads:
        return 0.0
    norm = torch.sqrt(sum(g.detach().pow(2).sum() for g in grads)).item()
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads:
            g.mul_(scale)
    return norm


class EarlyStopping:
    """Signals a stop once ``patience`` epochs pass without a new best validation loss."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = math.inf
        self.best_epoch = -1

    def step(self, epoch: int, value: float) -> bool:
        if value < self.best:
            self.best = value
            self.best_epoch = epoch
        return epoch - self.best_epoch >= self.patience


@dataclass
class TrainLog:
    epochs: list[dict] = field(default_factory=list)
    best_epoch: int = -1

    def append(self, record: dict, path=None):
        self.epochs.append(record)
        if path is not None:
            with open(path, "a") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")

    @property
    def lrs(self) -> list[float]:
        return [e["lr"] for e in self.epochs]

    @classmethod
    def read(cls, path) -> "TrainLog":
        out = cls()
        with open(path) as fh:
            out.epochs = [json.loads(line) for line in fh if line.strip()]
        if out.epochs:
            out.best_epoch = out.epochs[-1]["best_epoch"]
        return out


def _batches(n: int, size: int, rng: np.random.Generator | None):
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for i in range(0, n, size):
        yield order[i:i + size]


def _step(model, optimizer, mix, tgt, cfg: TrainConfig, where: str) -> float:
    ests = model(mix)
    loss = separation_loss(ests, tgt)
    if cfg.a2t_weight:
        loss = loss + cfg.a2t_weight * a2t_loss(model, tgt)
    if not torch.isfinite(loss):
        raise TrainingError(f"non-finite loss at {where}")
    optimizer.zero_grad()
    loss.backward()
    clip_gradients(model.parameters(), cfg.clip_norm)
    optimizer.step()
    return loss.item()


@torch.no_grad()
def validation_loss(model, mixtures: torch.Tensor, targets: torch.Tensor, batch_size: int = 4) -> float:
    """Negative mean PIT-SNR (dB) over a set of utterances."""
    model.eval()
    total, count = 0.0, 0
    for idx in _batches(len(mixtures), batch_size, None):
        ests = model(mixtures[idx])
        total += separation_loss(ests, targets[idx]).item() * len(idx)
        count += len(idx)
    model.train()
    return total / max(count, 1)


def _tensor(x, dtype):
    return torch.as_tensor(np.asarray(x), dtype=dtype)


def train(model, train_set, valid_set, cfg: TrainConfig, log_path=None):
    """Fit ``model`` on ``(mixtures [n, t], targets [n, C, t])`` pairs.

    Keeps the parameters of the best validation epoch, which are loaded back
    into ``model`` before returning ``(model, TrainLog)``.
    """
    cfg.validate()
    dtype = next(model.parameters()).dtype
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    train_mix, train_tgt = (_tensor(a, dtype) for a in train_set)
    valid_mix, valid_tgt = (_tensor(a, dtype) for a in valid_set)
    if log_path is not None:
        Path(log_path).parent.mkdir(parents=True, exist_ok=True)
        Path(log_path).write_text("")

    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr0)
    stopper = EarlyStopping(cfg.patience)
    history = TrainLog()
    best_state = copy.deepcopy(model.state_dict())
    model.train()
    for epoch in range(cfg.max_epochs):
        lr = lr_schedule(epoch, cfg)
        for group in optimizer.param_groups:
            group["lr"] = lr
        start = time.perf_counter()
        losses = []
        for b, idx in enumerate(_batches(len(train_mix), cfg.batch_size, rng)):
            losses.append(_step(model, optimizer, train_mix[idx], train_tgt[idx], cfg,
                                f"epoch {epoch}, batch {b}"))
        val = validation_loss(model, valid_mix, valid_tgt, cfg.batch_size)
        if not math.isfinite(val):
            raise TrainingError(f"non-finite validation loss at epoch {epoch}")
        stop = stopper.step(epoch, val)
        if stopper.best_epoch == epoch:
            best_state = copy.deepcopy(model.state_dict())
        history.best_epoch = stopper.best_epoch
        history.append({
            "epoch": epoch,
            "train_loss": float(np.mean(losses)) if losses else float("nan"),
            "valid_loss": val,
            "lr": lr,
            "wall_time": time.perf_counter() - start,
            "best_epoch": stopper.best_epoch,
        }, log_path)
        log.info("epoch %d  train %.3f  valid %.3f  lr %.2e", epoch, history.epochs[-1]["train_loss"],
                 val, lr)
        if stop:
            break
    model.load_state_dict(best_state)
    return model, history


@torch.no_grad()
def si_sdr_improvement(ests: torch.Tensor, mixture: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Per-utterance mean SI-SDR gain (dB) of PIT-aligned ``ests`` over the unprocessed mixture."""
    ests, mixture, targets = ests.double(), mixture.double(), targets.double()
    perms, _ = pit_assign(ests, targets, neg_si_sdr)
    aligned = reorder(ests, perms)
    sep = si_sdr_db(aligned, targets).mean(-1)
    base = si_sdr_db(mixture.unsqueeze(1).expand_as(targets), targets).mean(-1)
    return sep - base


def overfit(model, mixtures, targets, cfg: TrainConfig, max_steps: int = 2000,
            target_db: float | None = None, check_every: int = 50):
    """Full-batch steps on a fixed set; stops early once mean SI-SDR gain reaches ``target_db``.

    Returns ``(steps_taken, best_improvement_db)``.
    """
    cfg.validate()
    dtype = next(model.parameters()).dtype
    torch.manual_seed(cfg.seed)
    mix, tgt = _tensor(mixtures, dtype), _tensor(targets, dtype)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr0)
    model.train()
    best = -math.inf
    for step in range(1, max_steps + 1):
        _step(model, optimizer, mix, tgt, cfg, f"step {step}")
        if step % check_every == 0 or step == max_steps:
            gain = si_sdr_improvement(model(mix), mix, tgt).mean().item()
            best = max(best, gain)
            log.info("step %d  SI-SDR improvement %.2f dB", step, gain)
            if target_db is not None and gain >= target_db:
                return step, gain
    return max_steps, best
