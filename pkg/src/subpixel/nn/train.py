"""Training loop and prediction."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..features import InputTensor, Standardizer
from ..reference import FractionMap
from .layers import logcosh_loss, logcosh_loss_grad
from .model import (
    ModelConfig,
    ModelParams,
    backward,
    forward,
    init_params,
    recalibrate_batchnorm,
    update_running_stats,
)
from .optim import AdamState, adam_update


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 256
    epochs: int = 250
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    splits: tuple = (0.80, 0.05, 0.15)
    seed: int = 0
    bn_recalibrate: bool = True  # population batch-norm statistics after the last epoch
    lr_schedule: str = "cosine"  # lr * (1 + cos(pi * epoch / epochs)) / 2, or "constant"

    def __post_init__(self):
        object.__setattr__(self, "splits", tuple(float(s) for s in self.splits))
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError("lr_schedule must be 'constant' or 'cosine'")
        if any(s < 0 for s in self.splits) or abs(sum(self.splits) - 1.0) > 1e-9:
            raise ValueError("split fractions must be nonnegative and sum to 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["splits"] = list(self.splits)
        return d


@dataclass
class TrainingLog:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    n_train: int = 0
    n_val: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def as_network_input(x) -> np.ndarray:
    """Samples-first array from an InputTensor or an array already in that layout."""
    if isinstance(x, InputTensor):
        return x.nchw()
    return np.asarray(x)


def epoch_lr(tcfg: TrainConfig, epoch: int) -> float:
    """Learning rate for 0-based ``epoch`` under the configured schedule."""
    if tcfg.lr_schedule == "cosine" and tcfg.epochs > 0:
        return tcfg.lr * 0.5 * (1.0 + math.cos(math.pi * epoch / tcfg.epochs))
    return tcfg.lr


def train_step(params: ModelParams, adam_state: AdamState, x, y, tcfg: TrainConfig, rng, lr=None):
    """One Adam step on a standardized batch. Returns (params, adam_state, loss).

    ``lr`` overrides ``tcfg.lr`` (used by learning-rate schedules).
    """
    out, cache = forward(params, x, "train", rng)
    y = np.asarray(y, dtype=out.dtype)
    loss = logcosh_loss(out, y)
    if not np.isfinite(loss):
        raise TrainingDivergedError(
            f"non-finite loss {loss} at step {adam_state.t + 1}; "
            f"output range [{np.min(out)}, {np.max(out)}]"
        )
    grads = backward(params, cache, logcosh_loss_grad(out, y))
    weights, adam_state = adam_update(
        params.weights, grads, adam_state, tcfg.lr if lr is None else lr, tcfg.beta1, tcfg.beta2, tcfg.eps
    )
    state = update_running_stats(params, cache)
    return ModelParams(params.config, weights, state, params.standardizer), adam_state, loss


def _infer(params, x_std, batch=2048):
    outs = [forward(params, x_std[i : i + batch], "infer")[0] for i in range(0, len(x_std), batch)]
    if not outs:
        return np.zeros((0, 2), dtype=params.dtype)
    return np.concatenate(outs)


def fit(
    cfg: ModelConfig,
    tcfg: TrainConfig,
    x_train,
    y_train,
    x_val=None,
    y_val=None,
    dtype=np.float32,
    params: ModelParams | None = None,
):
    """Train for exactly ``tcfg.epochs`` epochs of shuffled mini-batches.

    Inputs are standardized per channel with statistics from ``x_train``;
    those statistics travel with the returned parameters. With
    ``tcfg.bn_recalibrate`` the batch-norm running statistics are replaced by
    dropout-free population statistics of the training set once training
    ends; the moving averages collected under dropout misjudge the
    inference-time activations.
    """
    x_train = as_network_input(x_train)
    y_train = np.asarray(y_train, dtype=dtype)
    if len(x_train) == 0:
        raise ValueError("empty training set")
    if len(x_train) != len(y_train):
        raise ValueError("x_train and y_train differ in length")
    if params is None:
        params = init_params(cfg, tcfg.seed, dtype)
    params.standardizer = Standardizer.fit(x_train)
    xs = params.standardizer.apply(x_train, dtype)
    has_val = x_val is not None and len(x_val) > 0
    if has_val:
        xv = params.standardizer.apply(as_network_input(x_val), dtype)
        yv = np.asarray(y_val, dtype=dtype)

    log = TrainingLog(n_train=len(xs), n_val=len(xv) if has_val else 0)
    rng = np.random.default_rng([tcfg.seed, 1])
    adam_state = AdamState.zeros_like(params.weights)
    n = len(xs)
    for epoch in range(tcfg.epochs):
        lr = epoch_lr(tcfg, epoch)
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, tcfg.batch_size):
            idx = order[start : start + tcfg.batch_size]
            params, adam_state, loss = train_step(params, adam_state, xs[idx], y_train[idx], tcfg, rng, lr)
            total += loss * len(idx)
        log.train_loss.append(total / n)
        if has_val:
            log.val_loss.append(logcosh_loss(_infer(params, xv), yv))
    if tcfg.bn_recalibrate and tcfg.epochs > 0:
        params = ModelParams(params.config, params.weights, recalibrate_batchnorm(params, xs), params.standardizer)
        if has_val and log.val_loss:
            log.val_loss[-1] = logcosh_loss(_infer(params, xv), yv)
    return params, log


def predict_raw(params: ModelParams, x) -> np.ndarray:
    """Unclipped infer-mode outputs, shape (n, 2)."""
    x = as_network_input(x)
    std = params.standardizer or Standardizer.identity(x.shape[1])
    return _infer(params, std.apply(x, params.dtype))


def predict_samples(params: ModelParams, x) -> np.ndarray:
    """Infer-mode outputs clamped to [0, 1] per output; sums are left alone."""
    return np.clip(predict_raw(params, x).astype(np.float64), 0.0, 1.0)


def predict(params: ModelParams, tensor: InputTensor) -> FractionMap:
    """Fraction map over the tensor's source grid; unsampled cells are invalid."""
    w = params.config.window
    if tensor.window != w:
        raise ValueError(f"tensor window {tensor.window} does not match model window {w}")
    preds = predict_samples(params, tensor)
    rows, cols = tensor.grid_shape
    builtup = np.zeros((rows, cols))
    veg = np.zeros((rows, cols))
    valid = np.zeros((rows, cols), dtype=bool)
    r, c = tensor.sample_index[:, 0], tensor.sample_index[:, 1]
    builtup[r, c] = preds[:, 0]
    veg[r, c] = preds[:, 1]
    valid[r, c] = True
    return FractionMap(builtup, veg, valid)
