"""Adam with bias correction."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0

    @classmethod
    def zeros_like(cls, weights: dict) -> "AdamState":
        return cls(
            {k: np.zeros_like(w) for k, w in weights.items()},
            {k: np.zeros_like(w) for k, w in weights.items()},
            0,
        )


def adam_update(weights, grads, state: AdamState, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """One Adam step. Returns (new_weights, new_state); inputs are left untouched."""
    t = state.t + 1
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    new_w, new_m, new_v = {}, {}, {}
    for k, w in weights.items():
        g = grads[k]
        m = beta1 * state.m[k] + (1.0 - beta1) * g
        v = beta2 * state.v[k] + (1.0 - beta2) * (g * g)
        step = lr * (m / c1) / (np.sqrt(v / c2) + eps)
        new_w[k] = (w - step).astype(w.dtype)
        new_m[k] = m.astype(w.dtype)
        new_v[k] = v.astype(w.dtype)
    return new_w, AdamState(new_m, new_v, t)
