"""Synthetic recovery benchmark: CNN against the LR, RF and mean-predictor baselines
on a generated scene where the true fractions are known."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import baselines as bl
from .evaluation import MetricsReport, compute_metrics, kfold_split
from .features import build_tensor, valid_cells
from .nn import ModelConfig, TrainConfig, fit, predict_samples
from .raster import signature_spread, synth_scene
from .reference import aggregate_fractions


@dataclass
class BenchmarkResult:
    seed: int
    noise_sd: float
    split_sizes: tuple
    metrics: dict = field(default_factory=dict)  # model name -> MetricsReport

    def rmse(self, model: str) -> np.ndarray:
        r: MetricsReport = self.metrics[model]
        return np.array([c.rmse_pct for c in r.classes.values()])

    def mae(self, model: str) -> np.ndarray:
        r: MetricsReport = self.metrics[model]
        return np.array([c.mae_pct for c in r.classes.values()])

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "noise_sd": self.noise_sd,
            "split_sizes": list(self.split_sizes),
            "metrics": {k: v.to_dict() for k, v in self.metrics.items()},
        }


def synthetic_comparison(
    seed: int = 0,
    noise_fraction: float = 0.0,
    rows: int = 60,
    cols: int = 80,
    factor: int = 6,
    n_train: int = 2000,
    epochs: int = 250,
    models=("cnn", "lr", "rf", "mean"),
    window: int = 7,
    model_config: ModelConfig | None = None,
    train_config: TrainConfig | None = None,
    n_trees: int = 100,
) -> BenchmarkResult:
    """Train the requested models on one synthetic scene and score them on its test split.

    ``noise_fraction`` scales the coarse-band noise relative to the mean
    per-band range of the class signatures. Enough cells are sampled that
    the training share of the 80/5/15 split holds ``n_train`` samples. The
    CNN and LR share the split, optimizer, batch size and epoch count.
    """
    noise_sd = noise_fraction * signature_spread()
    pair = synth_scene(seed, rows, cols, factor, noise_sd)
    ref = aggregate_fractions(pair.fine, factor)
    tcfg = train_config or TrainConfig(epochs=epochs, seed=seed)
    n_total = math.ceil(n_train / tcfg.splits[0])
    cells = np.argwhere(valid_cells(pair.coarse, window) & ref.valid_mask)
    if len(cells) < n_total:
        raise ValueError(f"scene has {len(cells)} usable cells, {n_total} needed")
    rng = np.random.default_rng([seed, 7])
    cells = cells[rng.choice(len(cells), size=n_total, replace=False)]
    tensor = build_tensor(pair.coarse, window, cells)
    y = ref.samples(cells)
    tr, va, te = kfold_split(n_total, tcfg.splits, seed)
    result = BenchmarkResult(seed, noise_sd, (len(tr), len(va), len(te)))

    for name in models:
        if name == "cnn":
            mcfg = model_config or ModelConfig(window=window)
            params, _ = fit(mcfg, tcfg, tensor.take(tr), y[tr], tensor.take(va), y[va])
            pred = predict_samples(params, tensor.take(te))
        elif name == "lr":
            rows_ = bl.flatten_features(tensor)
            model = bl.lr_fit(rows_[tr], y[tr], tcfg, rows_[va], y[va])
            pred = bl.lr_predict(model, rows_[te])
        elif name == "rf":
            rows_ = bl.flatten_features(tensor)
            forest = bl.rf_fit(rows_[tr], y[tr], n_trees=n_trees, seed=seed)
            pred = bl.rf_predict(forest, rows_[te])
        elif name == "mean":
            pred = np.broadcast_to(y[tr].mean(axis=0), y[te].shape)
        else:
            raise ValueError(f"unknown model {name!r}")
        result.metrics[name] = compute_metrics(y[te], pred)
    return result
