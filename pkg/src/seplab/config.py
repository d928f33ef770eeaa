"""Experiment configuration files (YAML nested maps), strictly validated.

Example::

    seed: 0
    dataset: {n_train: 200, n_valid: 50, n_test: 50, utterance_seconds: 4.0}
    model: {design: mixed, K: 2, block_dim: 16, hidden: 32, chunk_len: 16}
    train: {max_epochs: 30, batch_size: 4}
    eval: {split: test}
"""
from __future__ import annotations

import dataclasses
import os
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from seplab.errors import ConfigError
from seplab.models import ModelConfig
from seplab.scene.dataset import DatasetConfig
from seplab.training import TrainConfig

SEED_ENV = "SEPLAB_SEED"


@dataclass
class DataSection(DatasetConfig):
    out_dir: str = "data"


@dataclass
class EvalConfig:
    manifest: str | None = None
    split: str = "test"
    report_dir: str = "reports"
    improvement: bool = False


@dataclass
class SweepConfig:
    # entries like "simo_only:6", "mixed:2", "siso_iterative:1"; empty means every split
    include: list[str] = field(default_factory=list)
    tables: list[int] = field(default_factory=lambda: [1, 2])


@dataclass
class ExperimentConfig:
    seed: int = 0
    dataset: DataSection = field(default_factory=DataSection)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["model"] = self.model.to_dict()
        return d

    def validate(self) -> "ExperimentConfig":
        try:
            self.dataset.validate()
            self.model.validate()
            self.train.validate()
        except ConfigError as exc:
            raise ConfigError(f"invalid configuration: {exc}") from exc
        if self.eval.split not in ("train", "valid", "test"):
            raise ConfigError(f"eval.split: must be train, valid or test, got {self.eval.split!r}")
        for item in self.sweep.include:
            design, _, k = item.partition(":")
            if design not in ("simo_only", "mixed", "siso_iterative") or not k.isdigit():
                raise ConfigError(f"sweep.include: malformed entry {item!r}")
        return self


_SECTIONS = {"dataset": DataSection, "model": ModelConfig, "train": TrainConfig,
             "eval": EvalConfig, "sweep": SweepConfig}


def _check_type(value, hint, path):
    origin = typing.get_origin(hint)
    if origin in (typing.Union, types.UnionType):
        for arg in typing.get_args(hint):
            try:
                return _check_type(value, arg, path)
            except ConfigError:
                continue
        raise ConfigError(f"{path}: {value!r} does not match {hint}")
    if hint is type(None):
        if value is None:
            return None
        raise ConfigError(f"{path}: expected null")
    if origin in (list, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list, got {value!r}")
        (arg, *_) = typing.get_args(hint) or (typing.Any,)
        items = [_check_type(v, arg, f"{path}[{i}]") for i, v in enumerate(value)]
        return tuple(items) if origin is tuple else items
    if hint is typing.Any:
        return value
    if hint is bool:
        if isinstance(value, bool):
            return value
    elif hint is int:
        if isinstance(value, int) and not isinstance(value, bool):
            return value
    elif hint is float:
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
    elif hint is str:
        if isinstance(value, str):
            return value
    raise ConfigError(f"{path}: expected {getattr(hint, '__name__', hint)}, got {value!r}")


def _build(cls, data, path):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in names:
            raise ConfigError(f"{path}.{key}: unknown key")
        kwargs[key] = _check_type(value, hints[key], f"{path}.{key}")
    return cls(**kwargs)


def config_from_dict(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("config: top level must be a mapping")
    top = {}
    for key, value in data.items():
        if key == "seed":
            top["seed"] = _check_type(value, int, "seed")
        elif key in _SECTIONS:
            top[key] = _build(_SECTIONS[key], value, key)
        else:
            raise ConfigError(f"{key}: unknown key")
    return ExperimentConfig(**top)


def apply_override(data: dict, assignment: str) -> dict:
    """Apply ``section.key=value`` (value parsed as YAML) to a raw config mapping."""
    key, sep, raw = assignment.partition("=")
    if not sep or not key:
        raise ConfigError(f"override {assignment!r} is not of the form key=value")
    parts = key.split(".")
    node = data
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {assignment!r}: {p} is not a section")
    node[parts[-1]] = yaml.safe_load(raw)
    return data


def load_config(path=None, overrides=(), env=None) -> ExperimentConfig:
    """Read a YAML config, apply ``key=value`` overrides and the seed variable, then validate.

    The root seed propagates to the dataset and training seeds unless those are
    set explicitly.
    """
    env = os.environ if env is None else env
    data = {}
    if path is not None:
        try:
            data = yaml.safe_load(Path(path).read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: not valid YAML: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
    for item in overrides:
        apply_override(data, item)
    if env.get(SEED_ENV):
        try:
            data["seed"] = int(env[SEED_ENV])
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV} must be an integer") from exc
    seed = data.get("seed", 0)
    for section in ("dataset", "train"):
        sec = data.setdefault(section, {}) or {}
        if isinstance(sec, dict):
            sec.setdefault("seed", seed)
            data[section] = sec
    return config_from_dict(data).validate()
