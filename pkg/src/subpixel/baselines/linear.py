"""Linear-regression baseline: the network with no hidden layer."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..features import Standardizer
from ..nn import ModelParams, TrainConfig, TrainingLog, fit, linear_config, predict_raw


@dataclass
class LinearModel:
    params: ModelParams
    log: TrainingLog | None = None

    @property
    def coef(self) -> np.ndarray:
        """(n_features, 2) weights on standardized features."""
        return self.params.weights["fc1.w"]

    @property
    def intercept(self) -> np.ndarray:
        return self.params.weights["fc1.b"]


def _check_rows(rows):
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or len(rows) < 2:
        raise ValueError("need a 2-D array with at least 2 rows")
    if np.all(rows == rows[0]):
        raise ValueError("degenerate features: all rows identical")
    return rows


def lr_fit(
    rows,
    targets,
    tcfg: TrainConfig | None = None,
    rows_val=None,
    targets_val=None,
    method: str = "adam",
    dtype=np.float32,
) -> LinearModel:
    """Fit two linear maps (built-up, vegetation) on feature rows.

    ``method="adam"`` trains with the logcosh objective and the same optimizer
    stack as the network. ``method="lstsq"`` solves ordinary least squares in
    closed form and is meant for testing.
    """
    rows = _check_rows(rows)
    targets = np.asarray(targets, dtype=np.float64)
    cfg = linear_config(rows.shape[1])
    if method == "adam":
        params, log = fit(cfg, tcfg or TrainConfig(), rows, targets, rows_val, targets_val, dtype=dtype)
        return LinearModel(params, log)
    if method != "lstsq":
        raise ValueError(f"unknown method {method!r}")
    std = Standardizer.fit(rows)
    xs = std.apply(rows, np.float64)
    design = np.column_stack([xs, np.ones(len(xs))])
    sol, *_ = np.linalg.lstsq(design, targets, rcond=None)
    params = ModelParams(cfg, {"fc1.w": sol[:-1].astype(dtype), "fc1.b": sol[-1].astype(dtype)}, {}, std)
    return LinearModel(params)


def lr_predict(model: LinearModel, rows) -> np.ndarray:
    """Predictions clipped to [0, 1], shape (n, 2)."""
    raw = predict_raw(model.params, np.asarray(rows, dtype=np.float64))
    return np.clip(raw.astype(np.float64), 0.0, 1.0)
