"""Model artifact persistence (see :mod:`subpixel.container` for the byte layout)."""

from __future__ import annotations

import json

import numpy as np

from ..container import read_container, write_container
from ..features import Standardizer
from .model import ModelConfig, ModelParams
from .train import TrainingLog

KIND = "cnn-model"


def save_model(params: ModelParams, log: TrainingLog | None, path) -> None:
    arrays = {f"weights/{k}": v for k, v in params.weights.items()}
    arrays.update({f"state/{k}": v for k, v in params.state.items()})
    if params.standardizer is not None:
        arrays["standardizer/mean"] = np.asarray(params.standardizer.mean, dtype=np.float64)
        arrays["standardizer/std"] = np.asarray(params.standardizer.std, dtype=np.float64)
    meta = {"config": params.config.to_dict(), "log": log.to_dict() if log else None}
    write_container(path, KIND, meta, arrays)


def load_model(path):
    """Return (ModelParams, TrainingLog or None)."""
    meta, arrays = read_container(path, KIND)
    weights = {k.split("/", 1)[1]: v for k, v in arrays.items() if k.startswith("weights/")}
    state = {k.split("/", 1)[1]: v for k, v in arrays.items() if k.startswith("state/")}
    std = None
    if "standardizer/mean" in arrays:
        std = Standardizer(arrays["standardizer/mean"], arrays["standardizer/std"])
    params = ModelParams(ModelConfig.from_dict(meta["config"]), weights, state, std)
    log = TrainingLog(**meta["log"]) if meta["log"] else None
    return params, log


def export_json(params: ModelParams, log: TrainingLog | None, path) -> None:
    doc = {
        "config": params.config.to_dict(),
        "trainable_parameters": params.trainable_count(),
        "log": log.to_dict() if log else None,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
