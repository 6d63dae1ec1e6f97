"""Layer primitives with explicit forward/backward passes.

Activations are kept channels-last (n, h, w, c) internally. Every function is
dtype-preserving so the same code runs in float32 for training and float64 for
gradient checks.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

LN2 = np.log(2.0)


def leaky_relu(x, slope: float = 0.01):
    if slope <= 0:
        raise ValueError("slope must be positive")
    if np.ndim(x) == 0:
        return x if x >= 0 else slope * x
    return np.where(x >= 0, x, slope * x)


def leaky_relu_grad(x, slope):
    return np.where(x >= 0, 1.0, slope).astype(x.dtype)


def logcosh(x):
    """Elementwise ln(cosh(x)) without overflow: |x| - ln 2 + ln(1 + exp(-2|x|))."""
    a = np.abs(x)
    return a - LN2 + np.log1p(np.exp(-2.0 * a))


def logcosh_loss(pred, target) -> float:
    pred, target = np.asarray(pred), np.asarray(target)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    return float(np.mean(logcosh(pred - target), dtype=np.float64))


def logcosh_loss_grad(pred, target):
    return (np.tanh(pred - target) / pred.size).astype(pred.dtype)


def conv_forward(x, w, b):
    """Valid convolution. x (n, h, w, c), w (o, c, kh, kw) -> (n, h-kh+1, w-kw+1, o)."""
    n, h, wd, c = x.shape
    o, c2, kh, kw = w.shape
    if c != c2:
        raise ValueError(f"input has {c} channels, kernel expects {c2}")
    ho, wo = h - kh + 1, wd - kw + 1
    win = sliding_window_view(x, (kh, kw), axis=(1, 2))  # n, ho, wo, c, kh, kw
    cols = win.reshape(n * ho * wo, c * kh * kw)
    out = cols @ w.reshape(o, -1).T + b
    return out.reshape(n, ho, wo, o), cols


def conv_backward(dout, cols, x_shape, w, need_dx=True):
    """Returns (dx, dw, db); dx is None when ``need_dx`` is false (first layer)."""
    n, h, wd, c = x_shape
    o, _, kh, kw = w.shape
    _, ho, wo, _ = dout.shape
    d2 = dout.reshape(-1, o)
    dw = (d2.T @ cols).reshape(w.shape)
    db = d2.sum(axis=0)
    if not need_dx:
        return None, dw, db
    dcols = (d2 @ w.reshape(o, -1)).reshape(n, ho, wo, c, kh, kw)
    dx = np.zeros(x_shape, dtype=dout.dtype)
    for i in range(kh):
        for j in range(kw):
            dx[:, i : i + ho, j : j + wo, :] += dcols[..., i, j]
    return dx, dw, db


def batchnorm_forward(x, gamma, beta, eps, train, running_mean=None, running_var=None):
    """Normalize over every axis but the last (channel) axis."""
    axes = tuple(range(x.ndim - 1))
    if train:
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
    else:
        mean, var = running_mean.astype(x.dtype), running_var.astype(x.dtype)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean) * inv_std
    return gamma * xhat + beta, (xhat, inv_std, mean, var)


def batchnorm_backward(dy, gamma, cache):
    xhat, inv_std, _, _ = cache
    axes = tuple(range(dy.ndim - 1))
    m = dy.size // dy.shape[-1]
    dgamma = (dy * xhat).sum(axis=axes)
    dbeta = dy.sum(axis=axes)
    dxhat = dy * gamma
    dx = (inv_std / m) * (
        m * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes)
    )
    return dx.astype(dy.dtype), dgamma, dbeta


def dropout_mask(shape, rate, rng, dtype):
    """Inverted-dropout mask: kept units scaled by 1 / (1 - rate)."""
    keep = rng.random(shape, dtype=np.float64 if dtype == np.float64 else np.float32) >= rate
    return keep.astype(dtype) / dtype(1.0 - rate)
