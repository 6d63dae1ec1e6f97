"""Convolutional regression network: configuration, parameters, forward and backward passes.

Layer stack for the default configuration::

    conv 3x3 (64) -> batch norm -> leaky ReLU -> dropout 0.5
    conv 3x3 (128) -> batch norm -> leaky ReLU -> dropout 0.25
    flatten -> dense 512 -> leaky ReLU -> dropout 0.5 -> dense 2 (linear)

Convolutions are unpadded and there is no pooling, so a 7x7 window shrinks
to 5x5 and then 3x3. A configuration without conv layers and a single dense
layer of width 2 is plain linear regression.
"""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field

import numpy as np

from ..features import Standardizer
from . import layers as L


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    window: int = 7
    in_planes: int = 6
    conv_channels: tuple = (64, 128)
    conv_kernels: tuple = ((3, 3), (3, 3))
    fc_widths: tuple = (512, 2)
    dropout_rates: tuple = (0.5, 0.25, 0.5)
    leaky_slope: float = 0.01
    bn_epsilon: float = 1e-5
    bn_momentum: float = 0.9
    init_sd: float = 0.05
    init_mean: float = 0.0
    # flat input width for conv-free configurations; defaults to window^2 * in_planes
    n_inputs: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "conv_channels", tuple(int(c) for c in self.conv_channels))
        object.__setattr__(
            self, "conv_kernels", tuple(tuple(int(v) for v in k) for k in self.conv_kernels)
        )
        object.__setattr__(self, "fc_widths", tuple(int(c) for c in self.fc_widths))
        object.__setattr__(self, "dropout_rates", tuple(float(r) for r in self.dropout_rates))
        self.validate()

    def validate(self) -> None:
        if self.window < 1 or self.window % 2 == 0:
            raise ConfigError("window must be a positive odd integer")
        if len(self.conv_kernels) != len(self.conv_channels):
            raise ConfigError("one kernel shape per conv layer is required")
        if not self.fc_widths or self.fc_widths[-1] != 2:
            raise ConfigError("the final dense layer must have width 2")
        if len(self.dropout_rates) != len(self.conv_channels) + len(self.fc_widths) - 1:
            raise ConfigError("one dropout rate per conv layer and hidden dense layer")
        if any(not 0.0 <= r < 1.0 for r in self.dropout_rates):
            raise ConfigError("dropout rates must lie in [0, 1)")
        if self.leaky_slope <= 0 or self.bn_epsilon <= 0 or self.init_sd <= 0:
            raise ConfigError("leaky_slope, bn_epsilon and init_sd must be positive")
        h, w = self.spatial_sizes()[-1]
        if h < 1 or w < 1:
            raise ConfigError(f"window {self.window} too small for kernels {self.conv_kernels}")

    def spatial_sizes(self) -> list[tuple[int, int]]:
        sizes = [(self.window, self.window)]
        for kh, kw in self.conv_kernels:
            h, w = sizes[-1]
            sizes.append((h - kh + 1, w - kw + 1))
        return sizes

    @property
    def flatten_width(self) -> int:
        if not self.conv_channels:
            return self.n_inputs or self.window * self.window * self.in_planes
        h, w = self.spatial_sizes()[-1]
        return h * w * self.conv_channels[-1]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_kernels"] = [list(k) for k in self.conv_kernels]
        for key in ("conv_channels", "fc_widths", "dropout_rates"):
            d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def linear_config(n_inputs: int) -> ModelConfig:
    """Conv-free, hidden-layer-free configuration: linear regression."""
    return ModelConfig(conv_channels=(), conv_kernels=(), fc_widths=(2,), dropout_rates=(), n_inputs=n_inputs)


@dataclass
class ModelParams:
    config: ModelConfig
    weights: dict = field(default_factory=dict)
    state: dict = field(default_factory=dict)
    standardizer: Standardizer | None = None

    @property
    def dtype(self):
        return next(iter(self.weights.values())).dtype

    def trainable_count(self) -> int:
        return int(sum(v.size for v in self.weights.values()))

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(
            self.config,
            {k: v.astype(dtype) for k, v in self.weights.items()},
            {k: v.astype(dtype) for k, v in self.state.items()},
            copy.deepcopy(self.standardizer),
        )

    def copy(self) -> "ModelParams":
        return self.astype(self.dtype)


def init_params(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> ModelParams:
    """Gaussian weights (mean ``init_mean``, sd ``init_sd``), zero biases,
    batch-norm scale 1 and shift 0."""
    cfg.validate()
    rng = np.random.default_rng(seed)

    def gauss(shape):
        return rng.normal(cfg.init_mean, cfg.init_sd, size=shape).astype(dtype)

    weights, state = {}, {}
    c_in = cfg.in_planes
    for i, (c_out, (kh, kw)) in enumerate(zip(cfg.conv_channels, cfg.conv_kernels), 1):
        weights[f"conv{i}.w"] = gauss((c_out, c_in, kh, kw))
        weights[f"conv{i}.b"] = np.zeros(c_out, dtype)
        weights[f"bn{i}.gamma"] = np.ones(c_out, dtype)
        weights[f"bn{i}.beta"] = np.zeros(c_out, dtype)
        state[f"bn{i}.mean"] = np.zeros(c_out, dtype)
        state[f"bn{i}.var"] = np.ones(c_out, dtype)
        c_in = c_out
    d_in = cfg.flatten_width
    for j, d_out in enumerate(cfg.fc_widths, 1):
        weights[f"fc{j}.w"] = gauss((d_in, d_out))
        weights[f"fc{j}.b"] = np.zeros(d_out, dtype)
        d_in = d_out
    return ModelParams(cfg, weights, state)


def _to_nhwc(x: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    if x.ndim != 4 or x.shape[1:] != (cfg.in_planes, cfg.window, cfg.window):
        raise ValueError(
            f"expected input (n, {cfg.in_planes}, {cfg.window}, {cfg.window}), got {x.shape}"
        )
    return x.transpose(0, 2, 3, 1)


def forward(params: ModelParams, x: np.ndarray, mode: str = "infer", rng=None):
    """Run the network on standardized input.

    ``x`` is (n, planes, window, window), or (n, n_inputs) for conv-free
    configurations. In ``"train"`` mode batch norm uses batch statistics and
    dropout is active (needs ``rng``); ``"infer"`` uses running statistics and
    no dropout. Returns (outputs (n, 2), cache).
    """
    if mode not in ("train", "infer"):
        raise ValueError("mode must be 'train' or 'infer'")
    cfg = params.config
    p = params.weights
    dtype = params.dtype
    train = mode == "train"
    slope = cfg.leaky_slope
    x = np.asarray(x, dtype=dtype)
    rates = iter(cfg.dropout_rates)
    cache = {"layers": [], "bn_stats": {}}

    if cfg.conv_channels:
        h = _to_nhwc(x, cfg)
    else:
        h = x.reshape(len(x), -1)
        if h.shape[1] != cfg.flatten_width:
            raise ValueError(f"expected {cfg.flatten_width} inputs, got {h.shape[1]}")

    for i in range(1, len(cfg.conv_channels) + 1):
        w = p[f"conv{i}.w"]
        z, cols = L.conv_forward(h, w, p[f"conv{i}.b"])
        y, bn_cache = L.batchnorm_forward(
            z, p[f"bn{i}.gamma"], p[f"bn{i}.beta"], cfg.bn_epsilon, train,
            params.state[f"bn{i}.mean"], params.state[f"bn{i}.var"],
        )
        if train:
            cache["bn_stats"][i] = (bn_cache[2], bn_cache[3])
        a = L.leaky_relu(y, slope)
        rate = next(rates)
        mask = L.dropout_mask(a.shape, rate, rng, dtype.type) if train and rate > 0 else None
        out = a * mask if mask is not None else a
        cache["layers"].append(("conv", i, h.shape, cols, bn_cache, y, mask))
        h = out

    h = h.reshape(len(h), -1)
    n_fc = len(cfg.fc_widths)
    for j in range(1, n_fc + 1):
        z = h @ p[f"fc{j}.w"] + p[f"fc{j}.b"]
        if j == n_fc:
            cache["layers"].append(("fc", j, h, None, None))
            h = z
            break
        a = L.leaky_relu(z, slope)
        rate = next(rates)
        mask = L.dropout_mask(a.shape, rate, rng, dtype.type) if train and rate > 0 else None
        cache["layers"].append(("fc", j, h, z, mask))
        h = a * mask if mask is not None else a
    return h, cache


def backward(params: ModelParams, cache: dict, dout: np.ndarray) -> dict:
    """Gradients of a scalar loss w.r.t. every trainable weight, given dL/doutput."""
    cfg = params.config
    p = params.weights
    slope = cfg.leaky_slope
    grads = {}
    g = dout
    flat_shape = None
    for entry in reversed(cache["layers"]):
        if entry[0] == "fc":
            _, j, h_in, z, mask = entry
            if z is not None:
                if mask is not None:
                    g = g * mask
                g = g * L.leaky_relu_grad(z, slope)
            grads[f"fc{j}.w"] = h_in.T @ g
            grads[f"fc{j}.b"] = g.sum(axis=0)
            g = g @ p[f"fc{j}.w"].T
        else:
            _, i, in_shape, cols, bn_cache, y, mask = entry
            if flat_shape is None:
                flat_shape = y.shape
                g = g.reshape(flat_shape)
            if mask is not None:
                g = g * mask
            g = g * L.leaky_relu_grad(y, slope)
            g, grads[f"bn{i}.gamma"], grads[f"bn{i}.beta"] = L.batchnorm_backward(
                g, p[f"bn{i}.gamma"], bn_cache
            )
            g, grads[f"conv{i}.w"], grads[f"conv{i}.b"] = L.conv_backward(
                g, cols, in_shape, p[f"conv{i}.w"], need_dx=i > 1
            )
    return grads


def update_running_stats(params: ModelParams, cache: dict) -> dict:
    """New batch-norm running statistics (exponential moving average)."""
    m = params.config.bn_momentum
    state = dict(params.state)
    for i, (mean, var) in cache["bn_stats"].items():
        state[f"bn{i}.mean"] = (m * params.state[f"bn{i}.mean"] + (1 - m) * mean).astype(mean.dtype)
        state[f"bn{i}.var"] = (m * params.state[f"bn{i}.var"] + (1 - m) * var).astype(var.dtype)
    return state


def recalibrate_batchnorm(params: ModelParams, x: np.ndarray, chunk: int = 2048) -> dict:
    """Batch-norm state replaced by population statistics of ``x`` (standardized input).

    Layers are done in order, so layer i sees inputs normalized with the
    already recalibrated statistics of layers before it. Dropout is off,
    matching inference.
    """
    cfg = params.config
    p = params.weights
    state = dict(params.state)
    x = np.asarray(x, dtype=params.dtype)
    if not cfg.conv_channels or len(x) == 0:
        return state
    for target in range(1, len(cfg.conv_channels) + 1):
        total = sq = 0.0
        count = 0
        for start in range(0, len(x), chunk):
            h = _to_nhwc(x[start : start + chunk], cfg)
            for i in range(1, target + 1):
                z, _ = L.conv_forward(h, p[f"conv{i}.w"], p[f"conv{i}.b"])
                if i == target:
                    z64 = z.astype(np.float64).reshape(-1, z.shape[-1])
                    total = total + z64.sum(axis=0)
                    sq = sq + (z64**2).sum(axis=0)
                    count += len(z64)
                    break
                y, _ = L.batchnorm_forward(
                    z, p[f"bn{i}.gamma"], p[f"bn{i}.beta"], cfg.bn_epsilon, False,
                    state[f"bn{i}.mean"], state[f"bn{i}.var"],
                )
                h = L.leaky_relu(y, cfg.leaky_slope)
        mean = total / count
        var = np.maximum(sq / count - mean**2, 0.0)
        state[f"bn{target}.mean"] = mean.astype(params.dtype)
        state[f"bn{target}.var"] = var.astype(params.dtype)
    return state
