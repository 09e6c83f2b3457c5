"""Run configuration: nested dataclasses loaded from YAML with strict keys."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .training import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class WorldConfig:
    d: int = 16
    n_attrs: int = 3
    attr_scale: float = 1.0
    gen_scale: float = 0.4
    entangle: float = 0.5


@dataclass
class FlowConfig:
    n_layers: int = 6
    hidden: int = 64
    scale_clamp: float = 3.0
    iterations: int = 2000
    batch_size: int = 256
    lr: float = 1e-3


@dataclass
class ClassifierSection:
    labels_per_attr: int | None = None
    hidden: int = 64
    iterations: int = 4000
    batch_size: int = 256
    lr: float = 3e-3


@dataclass
class TransformerSection:
    hidden: int = 64
    n_blocks: int = 4
    fixed_step: bool = False
    max_steps: int = 16


@dataclass
class EvalConfig:
    n_examples: int = 512
    steps: list[int] = field(default_factory=lambda: list(range(1, 17)))
    alphas: list[float] = field(default_factory=lambda: [0.25 * i for i in range(33)])
    accuracy_target: float = 0.95


@dataclass
class RunConfig:
    seed: int = 0
    out: str = "runs/default"
    checkpoint: str | None = None
    world: WorldConfig = field(default_factory=WorldConfig)
    flow: FlowConfig = field(default_factory=FlowConfig)
    classifier: ClassifierSection = field(default_factory=ClassifierSection)
    transformer: TransformerSection = field(default_factory=TransformerSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    @property
    def checkpoint_path(self) -> Path:
        return Path(self.checkpoint) if self.checkpoint else Path(self.out) / "checkpoint.ckpt"

    def train_config(self) -> TrainConfig:
        return dataclasses.replace(self.train, seed=self.seed)


def _build(cls, data, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping, got {type(data).__name__}")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown config key(s) {', '.join(path + k for k in unknown)}")
    kwargs = {}
    defaults = cls()
    for name, value in data.items():
        current = getattr(defaults, name)
        if dataclasses.is_dataclass(current):
            kwargs[name] = _build(type(current), value, f"{path}{name}.")
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from None


def config_from_dict(data: dict | None) -> RunConfig:
    return _build(RunConfig, data or {}, "")


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return config_from_dict(yaml.safe_load(fh))


def config_to_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)
