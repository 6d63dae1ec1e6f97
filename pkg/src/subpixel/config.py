"""Run configuration: defaults < JSON config file < command-line flags."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from pathlib import Path

from .nn import ModelConfig, TrainConfig


@dataclass
class SceneConfig:
    rows: int = 150
    cols: int = 150
    factor: int = 6
    noise_sd: float = 0.0


@dataclass
class ForestConfig:
    n_trees: int = 100
    max_features: int | None = None  # floor(sqrt(feature width)) when unset
    min_leaf: int = 5


@dataclass
class ReferenceConfig:
    k_init: int = 10
    max_iter: int = 20
    split_sd: float = 0.05
    merge_dist: float = 0.05
    ndvi_veg_threshold: float = 0.3
    rules: dict | None = None  # cluster id -> class code; nearest signature when unset
    n_samples: int = 400


@dataclass
class Paths:
    coarse: str | None = None
    labels: str | None = None
    fine: str | None = None
    truth: str | None = None
    model: str | None = None


@dataclass
class RunConfig:
    seed: int = 0
    deterministic: bool = False
    out: str = "out"
    window: int = 7
    sample_count: int = 15000
    crossval_folds: tuple = (0.35, 0.35, 0.30)
    block: int = 3
    scene: SceneConfig = field(default_factory=SceneConfig)
    model: dict = field(default_factory=dict)  # ModelConfig overrides
    train: dict = field(default_factory=dict)  # TrainConfig overrides
    rf: ForestConfig = field(default_factory=ForestConfig)
    reference: ReferenceConfig = field(default_factory=ReferenceConfig)
    paths: Paths = field(default_factory=Paths)

    def model_config(self) -> ModelConfig:
        over = dict(self.model)
        over.setdefault("window", self.window)
        if over["window"] != self.window:
            raise ValueError("model.window disagrees with window")
        return ModelConfig.from_dict({**ModelConfig().to_dict(), **over})

    def train_config(self) -> TrainConfig:
        return TrainConfig(**{**TrainConfig().to_dict(), "seed": self.seed, **self.train})

    def path(self, key: str, default_name: str) -> Path:
        value = getattr(self.paths, key)
        return Path(value) if value else Path(self.out) / default_name

    def to_dict(self) -> dict:
        d = asdict(self)
        d["crossval_folds"] = list(self.crossval_folds)
        return d


def _merge(obj, data: dict):
    if not is_dataclass(obj):
        return data
    known = {f.name: f for f in fields(obj)}
    updates = {}
    for key, value in data.items():
        if key not in known:
            raise ValueError(f"unknown config key {key!r}")
        current = getattr(obj, key)
        if is_dataclass(current) and isinstance(value, dict):
            updates[key] = _merge(current, value)
        elif isinstance(current, dict) and isinstance(value, dict):
            updates[key] = {**current, **value}
        else:
            updates[key] = tuple(value) if isinstance(current, tuple) else value
    return replace(obj, **updates)


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then the JSON file at ``path``, then ``overrides`` (nested dicts)."""
    cfg = RunConfig()
    if path:
        cfg = _merge(cfg, json.loads(Path(path).read_text(encoding="utf-8")))
    if overrides:
        cfg = _merge(cfg, overrides)
    if cfg.sample_count < 1 or cfg.window < 1 or cfg.window % 2 == 0:
        raise ValueError("sample_count must be positive and window a positive odd integer")
    return cfg
