"""Random-forest regression with multi-output trees and out-of-bag scoring."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from ..container import read_container, write_container

KIND = "rf-forest"


@dataclass
class Tree:
    """Array-encoded binary tree; ``feature[k] == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray  # (n_nodes, n_outputs)
    depth: int = 0

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def n_leaves(self) -> int:
        return int((self.feature < 0).sum())

    def apply(self, X) -> np.ndarray:
        """Leaf index reached by each row."""
        X = np.asarray(X, dtype=np.float64)
        node = np.zeros(len(X), dtype=np.int64)
        active = self.feature[node] >= 0
        while active.any():
            idx = np.flatnonzero(active)
            cur = node[idx]
            go_left = X[idx, self.feature[cur]] <= self.threshold[cur]
            node[idx] = np.where(go_left, self.left[cur], self.right[cur])
            active[idx] = self.feature[node[idx]] >= 0
        return node

    def predict(self, X) -> np.ndarray:
        return self.value[self.apply(X)]


@dataclass
class Forest:
    trees: list
    n_features: int
    bootstrap_counts: np.ndarray  # (n_trees, n_train) draws of each training row
    oob_score: float = math.nan
    oob_defined: bool = False
    oob_prediction: np.ndarray | None = field(default=None, repr=False)
    params: dict = field(default_factory=dict)

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def summary(self) -> dict:
        depths = [t.depth for t in self.trees]
        leaves = [t.n_leaves for t in self.trees]
        return {
            "n_trees": self.n_trees,
            "n_features": self.n_features,
            "depth": {"min": min(depths), "mean": float(np.mean(depths)), "max": max(depths)},
            "leaves": {"min": min(leaves), "mean": float(np.mean(leaves)), "max": max(leaves)},
            "oob_score": None if not self.oob_defined else self.oob_score,
            "oob_defined": self.oob_defined,
            "params": self.params,
        }


def _best_split(Xn, yn, feats, min_leaf):
    """Best (feature, threshold, gain) by variance reduction over ``feats``.

    The gain of splitting the first k sorted rows from the rest is the
    between-group sum of squares, m * S_k^2 / (k (m - k)) summed over outputs,
    with S_k the prefix sum of centered targets.
    """
    m = len(yn)
    xs = Xn[:, feats]
    order = np.argsort(xs, axis=0, kind="stable")
    x_sorted = np.take_along_axis(xs, order, axis=0)
    yc = yn - yn.mean(axis=0)
    s = np.cumsum(yc[order], axis=0)[:-1]  # (m-1, f, outputs); row k-1 -> left size k
    k = np.arange(1, m)[:, None]
    gain = (s**2).sum(axis=2) * m / (k * (m - k))
    ok = (x_sorted[1:] > x_sorted[:-1]) & (k >= min_leaf) & (m - k >= min_leaf)
    gain = np.where(ok, gain, -1.0)
    flat = int(np.argmax(gain))
    pos, j = divmod(flat, len(feats))
    if gain[pos, j] <= 0:
        return None
    lo, hi = x_sorted[pos, j], x_sorted[pos + 1, j]
    thr = lo + (hi - lo) / 2
    if not lo <= thr < hi:
        thr = lo
    return int(feats[j]), float(thr), float(gain[pos, j])


def build_tree(X, y, max_features, min_leaf, rng, max_depth=None) -> Tree:
    n, d = X.shape
    feature, threshold, left, right, value = [], [], [], [], []
    stack = [(np.arange(n), 0, None)]
    max_seen = 0
    while stack:
        idx, depth, parent = stack.pop()
        node = len(feature)
        if parent is not None:
            pnode, side = parent
            (left if side == 0 else right)[pnode] = node
        yn = y[idx]
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(yn.mean(axis=0))
        max_seen = max(max_seen, depth)
        if len(idx) < 2 * min_leaf or np.all(yn == yn[0]) or (max_depth is not None and depth >= max_depth):
            continue
        feats = rng.choice(d, size=min(max_features, d), replace=False)
        split = _best_split(X[idx], yn, feats, min_leaf)
        if split is None:
            continue
        f, thr, _ = split
        feature[node], threshold[node] = f, thr
        go_left = X[idx, f] <= thr
        stack.append((idx[~go_left], depth + 1, (node, 1)))
        stack.append((idx[go_left], depth + 1, (node, 0)))
    return Tree(
        np.array(feature, dtype=np.int64),
        np.array(threshold, dtype=np.float64),
        np.array(left, dtype=np.int64),
        np.array(right, dtype=np.int64),
        np.array(value, dtype=np.float64),
        max_seen,
    )


def oob_r2(targets, predictions, covered):
    """Mean over outputs of the coefficient of determination on covered rows.

    Returns (score, defined); undefined when no row is covered or a target
    column has zero variance on the covered rows.
    """
    t, p = targets[covered], predictions[covered]
    if len(t) == 0:
        return math.nan, False
    ss_tot = ((t - t.mean(axis=0)) ** 2).sum(axis=0)
    if np.any(ss_tot == 0):
        return math.nan, False
    ss_res = ((t - p) ** 2).sum(axis=0)
    return float(np.mean(1.0 - ss_res / ss_tot)), True


def rf_fit(
    rows,
    targets,
    n_trees: int = 100,
    max_features: int | None = None,
    min_leaf: int = 5,
    seed: int = 0,
    bootstrap: bool = True,
    max_depth: int | None = None,
) -> Forest:
    """Bagged regression trees; each split considers ``max_features`` random
    features (default floor(sqrt(n_features)))."""
    X = np.asarray(rows, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    if n_trees < 1:
        raise ValueError("n_trees must be >= 1")
    n, d = X.shape
    if n < 2:
        raise ValueError("need at least 2 samples")
    if max_features is None:
        max_features = max(1, math.isqrt(d))
    streams = np.random.SeedSequence(seed).spawn(n_trees)
    trees, counts = [], np.zeros((n_trees, n), dtype=np.int64)
    oob_sum = np.zeros_like(y)
    oob_hits = np.zeros(n, dtype=np.int64)
    for b, ss in enumerate(streams):
        rng = np.random.default_rng(ss)
        if bootstrap:
            draw = rng.integers(0, n, size=n)
            counts[b] = np.bincount(draw, minlength=n)
        else:
            draw = np.arange(n)
            counts[b] = 1
        tree = build_tree(X[draw], y[draw], max_features, min_leaf, rng, max_depth)
        trees.append(tree)
        out = counts[b] == 0
        if out.any():
            oob_sum[out] += tree.predict(X[out])
            oob_hits[out] += 1
    covered = oob_hits > 0
    oob_pred = np.full_like(y, np.nan)
    oob_pred[covered] = oob_sum[covered] / oob_hits[covered, None]
    score, defined = oob_r2(y, oob_pred, covered)
    params = {
        "n_trees": n_trees,
        "max_features": int(max_features),
        "min_leaf": min_leaf,
        "seed": seed,
        "bootstrap": bootstrap,
        "max_depth": max_depth,
    }
    return Forest(trees, d, counts, score, defined, oob_pred, params)


def rf_predict_raw(forest: Forest, rows) -> np.ndarray:
    X = np.asarray(rows, dtype=np.float64)
    return np.mean([t.predict(X) for t in forest.trees], axis=0)


def rf_predict(forest: Forest, rows) -> np.ndarray:
    """Mean of the trees' leaf values, clipped to [0, 1]."""
    return np.clip(rf_predict_raw(forest, rows), 0.0, 1.0)


def save_forest(forest: Forest, path) -> None:
    sizes = np.array([t.n_nodes for t in forest.trees], dtype=np.int64)
    arrays = {
        "tree_sizes": sizes,
        "tree_depths": np.array([t.depth for t in forest.trees], dtype=np.int64),
        "feature": np.concatenate([t.feature for t in forest.trees]),
        "threshold": np.concatenate([t.threshold for t in forest.trees]),
        "left": np.concatenate([t.left for t in forest.trees]),
        "right": np.concatenate([t.right for t in forest.trees]),
        "value": np.concatenate([t.value for t in forest.trees]),
        "bootstrap_counts": forest.bootstrap_counts,
    }
    meta = {
        "n_features": forest.n_features,
        "oob_score": None if not forest.oob_defined else forest.oob_score,
        "params": forest.params,
    }
    write_container(path, KIND, meta, arrays)


def load_forest(path) -> Forest:
    meta, a = read_container(path, KIND)
    trees, start = [], 0
    for size, depth in zip(a["tree_sizes"], a["tree_depths"]):
        sl = slice(start, start + int(size))
        trees.append(Tree(a["feature"][sl], a["threshold"][sl], a["left"][sl], a["right"][sl], a["value"][sl], int(depth)))
        start += int(size)
    score = meta["oob_score"]
    return Forest(
        trees,
        meta["n_features"],
        a["bootstrap_counts"],
        math.nan if score is None else score,
        score is not None,
        None,
        meta["params"],
    )


def write_summary(forest: Forest, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(forest.summary(), fh, indent=2, sort_keys=True)
        fh.write("\n")
