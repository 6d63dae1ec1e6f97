"""Accuracy assessment for fraction maps.

Fraction errors are reported in percent: MAE% = 100 * mean|r - p|,
RMSE% = 100 * sqrt(mean (r - p)^2). The Nash-Sutcliffe index is
1 - sum (r - p)^2 / sum (r - mean r)^2 and R^2 is the squared Pearson
correlation.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

from .reference import FractionMap, confusion, kappa

CLASSES = ("built-up", "vegetation")


@dataclass
class ClassMetrics:
    mae_pct: float
    rmse_pct: float
    ns: float
    r2: float
    ns_defined: bool = True
    r2_defined: bool = True


@dataclass
class MetricsReport:
    classes: dict
    n: int
    scale: str = "1x1"

    def __getitem__(self, name) -> ClassMetrics:
        return self.classes[name]

    def to_dict(self) -> dict:
        def clean(v):
            return None if isinstance(v, float) and math.isnan(v) else v

        return {
            "n": self.n,
            "scale": self.scale,
            "classes": {k: {f: clean(v) for f, v in asdict(m).items()} for k, m in self.classes.items()},
        }

    def csv_rows(self, model: str = "") -> list:
        return [
            [model, self.scale, name, self.n, m.mae_pct, m.rmse_pct, m.ns, m.r2]
            for name, m in self.classes.items()
        ]


CSV_HEADER = ["model", "scale", "class", "n", "mae_pct", "rmse_pct", "ns", "r2"]


def _single(ref, pred) -> ClassMetrics:
    err = ref - pred
    mae = float(np.mean(np.abs(err)) * 100)
    rmse = float(np.sqrt(np.mean(err**2)) * 100)
    ss_tot = float(np.sum((ref - ref.mean()) ** 2))
    if ss_tot > 0:
        ns, ns_ok = 1.0 - float(np.sum(err**2)) / ss_tot, True
    else:
        ns, ns_ok = math.nan, False
    if ss_tot > 0 and np.ptp(pred) > 0:
        r2, r2_ok = float(np.corrcoef(ref, pred)[0, 1] ** 2), True
    else:
        r2, r2_ok = math.nan, False
    return ClassMetrics(mae, rmse, ns, r2, ns_ok, r2_ok)


def compute_metrics(ref, pred, names=CLASSES, scale: str = "1x1") -> MetricsReport:
    """Metrics per class. ``ref`` and ``pred`` are (n,) or (n, k) fraction arrays."""
    ref = np.asarray(ref, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    if ref.shape != pred.shape:
        raise ValueError(f"shape mismatch {ref.shape} vs {pred.shape}")
    if ref.shape[0] < 1:
        raise ValueError("need at least one sample")
    if ref.ndim == 1:
        ref, pred = ref[:, None], pred[:, None]
        names = names[:1]
    classes = {name: _single(ref[:, k], pred[:, k]) for k, name in enumerate(names)}
    return MetricsReport(classes, int(ref.shape[0]), scale)


def aggregate_blocks(fmap: FractionMap, k: int = 3) -> FractionMap:
    """Mean of the valid cells in each k x k block; trailing partial blocks are dropped."""
    if k < 1:
        raise ValueError("k must be >= 1")
    r, c = fmap.rows // k, fmap.cols // k
    valid = fmap.valid_mask[: r * k, : c * k].reshape(r, k, c, k)
    count = valid.sum(axis=(1, 3))

    def block_mean(plane):
        p = np.where(fmap.valid_mask, plane, 0.0)[: r * k, : c * k].reshape(r, k, c, k)
        total = p.sum(axis=(1, 3))
        return np.divide(total, count, out=np.zeros_like(total), where=count > 0)

    return FractionMap(block_mean(fmap.builtup), block_mean(fmap.vegetation), count > 0)


def paired_samples(ref: FractionMap, pred: FractionMap):
    """(n, 2) reference and prediction arrays over cells valid in both maps."""
    both = ref.valid_mask & pred.valid_mask
    return ref.stack()[:, both].T, pred.stack()[:, both].T


@dataclass
class RocResult:
    auc: float
    auc_defined: bool
    thresholds: np.ndarray = field(repr=False)
    tpr: np.ndarray = field(repr=False)
    fpr: np.ndarray = field(repr=False)
    sensitivity: float = math.nan
    specificity: float = math.nan
    kappa: float = math.nan

    def to_dict(self) -> dict:
        def clean(v):
            return None if isinstance(v, float) and math.isnan(v) else v

        return {
            "auc": clean(self.auc),
            "auc_defined": self.auc_defined,
            "sensitivity": clean(self.sensitivity),
            "specificity": clean(self.specificity),
            "kappa": clean(self.kappa),
        }

    def curve_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["threshold", "tpr", "fpr"])
        for t, a, b in zip(self.thresholds, self.tpr, self.fpr):
            w.writerow([repr(float(t)), repr(float(a)), repr(float(b))])
        return buf.getvalue()


def auc_rank(scores, truth) -> float:
    """Mann-Whitney AUC; tied positive/negative pairs count one half."""
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth, dtype=bool)
    n_pos, n_neg = int(truth.sum()), int((~truth).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes")
    ranks = rankdata(scores)
    u = ranks[truth].sum() - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))


def roc_analysis(scores, truth_fracs, threshold: float = 0.5) -> RocResult:
    """Binary assessment: truth is ``truth_frac >= threshold``, positives are
    ``score >= threshold``. The curve runs over every distinct score."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    truth = np.asarray(truth_fracs, dtype=np.float64).ravel() >= threshold
    if len(scores) != len(truth) or len(scores) == 0:
        raise ValueError("scores and truth must be equal-length and non-empty")
    n_pos, n_neg = int(truth.sum()), int((~truth).sum())
    defined = n_pos > 0 and n_neg > 0
    auc = auc_rank(scores, truth) if defined else math.nan

    cuts = np.unique(scores)[::-1]
    order = np.argsort(-scores, kind="stable")
    s_sorted, t_sorted = scores[order], truth[order]
    tp = np.cumsum(t_sorted)
    fp = np.cumsum(~t_sorted)
    last = np.searchsorted(-s_sorted, -cuts, side="right") - 1
    tpr = tp[last] / n_pos if n_pos else np.full(len(cuts), np.nan)
    fpr = fp[last] / n_neg if n_neg else np.full(len(cuts), np.nan)
    thresholds = np.concatenate([[np.inf], cuts])
    tpr = np.concatenate([[0.0], tpr])
    fpr = np.concatenate([[0.0], fpr])

    called = scores >= threshold
    sens = float((called & truth).sum() / n_pos) if n_pos else math.nan
    specificity = float((~called & ~truth).sum() / n_neg) if n_neg else math.nan
    try:
        kap = kappa(confusion(called, truth, labels=(True, False)))
    except ValueError:
        kap = math.nan
    return RocResult(auc, defined, thresholds, tpr, fpr, sens, specificity, kap)


@dataclass
class BiasHistogram:
    centers: np.ndarray
    counts: np.ndarray
    within_15: float
    within_25: float

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bin_center", "count"])
        for c, n in zip(self.centers, self.counts):
            w.writerow([f"{c:.4f}", int(n)])
        return buf.getvalue()


def bias_histogram(ref, pred, bin_width: float = 0.05) -> BiasHistogram:
    """Histogram of pred - ref on bins centered at multiples of ``bin_width``.

    Bin k covers [(k - 1/2) w, (k + 1/2) w); the two end bins are cut at -1
    and 1 (the right end inclusive), so the bins partition [-1, 1].
    """
    ref = np.asarray(ref, dtype=np.float64).ravel()
    pred = np.asarray(pred, dtype=np.float64).ravel()
    if ref.shape != pred.shape:
        raise ValueError("ref and pred differ in length")
    half = round(1.0 / bin_width)
    if not math.isclose(half * bin_width, 1.0):
        raise ValueError("1 / bin_width must be an integer")
    err = pred - ref
    if np.any(np.abs(err) > 1.0 + 1e-12):
        raise ValueError("errors outside [-1, 1]; fractions must lie in [0, 1]")
    k = np.clip(np.floor(err / bin_width + 0.5), -half, half).astype(np.int64)
    counts = np.bincount(k + half, minlength=2 * half + 1)
    centers = np.arange(-half, half + 1) * bin_width
    n = max(len(err), 1)
    tol = 1e-12
    within_15 = float((np.abs(err) <= 0.15 + tol).sum() / n)
    within_25 = float((np.abs(err) <= 0.25 + tol).sum() / n)
    return BiasHistogram(centers, counts, within_15, within_25)


@dataclass
class BoxGroup:
    label: str
    count: int
    min: float = math.nan
    q1: float = math.nan
    median: float = math.nan
    q3: float = math.nan
    max: float = math.nan


def boxplot_summary(ref, pred, factor: int = 6) -> list:
    """Five-number summaries of ``pred`` grouped by the reference lattice value
    k / factor^2, k = 0 .. factor^2. Quartiles interpolate linearly.

    Reference values may carry float32 rounding; they must sit within 1e-4
    of a lattice step.
    """
    ref = np.asarray(ref, dtype=np.float64).ravel()
    pred = np.asarray(pred, dtype=np.float64).ravel()
    cells = factor * factor
    scaled = ref * cells
    k = np.rint(scaled)
    if np.any(np.abs(scaled - k) > 1e-4) or np.any((k < 0) | (k > cells)):
        raise ValueError(f"reference values off the k/{cells} lattice")
    k = k.astype(np.int64)
    width = len(str(cells))
    groups = []
    for g in range(cells + 1):
        vals = pred[k == g]
        label = str(g).zfill(width)
        if len(vals) == 0:
            groups.append(BoxGroup(label, 0))
            continue
        q1, med, q3 = np.percentile(vals, [25, 50, 75], method="linear")
        groups.append(BoxGroup(label, len(vals), float(vals.min()), float(q1), float(med), float(q3), float(vals.max())))
    return groups


def fold_sizes(n: int, fractions) -> list:
    fractions = [float(f) for f in fractions]
    if any(f < 0 for f in fractions):
        raise ValueError("fractions must be nonnegative")
    if not math.isclose(sum(fractions), 1.0, abs_tol=1e-9):
        raise ValueError("fractions must sum to 1")
    sizes = [math.floor(n * f + 1e-9) for f in fractions]
    for i in range(n - sum(sizes)):
        sizes[i % len(sizes)] += 1
    return sizes


def kfold_split(n: int, fractions, seed: int = 0) -> list:
    """Shuffle 0..n-1 and cut it into disjoint folds of size floor(n * f_i);
    leftover indices go one each to the earliest folds."""
    sizes = fold_sizes(n, fractions)
    perm = np.random.default_rng(seed).permutation(n)
    bounds = np.cumsum([0] + sizes)
    return [perm[bounds[i] : bounds[i + 1]] for i in range(len(sizes))]


@dataclass
class CrossValResult:
    folds: list  # MetricsReport per held-out fold, in fold order
    mean: dict

    def to_dict(self) -> dict:
        return {
            "folds": [dict(r.to_dict(), held_out=i) for i, r in enumerate(self.folds)],
            "mean": self.mean,
        }


def _take(data, idx):
    if hasattr(data, "take") and not isinstance(data, np.ndarray):
        return data.take(idx)
    return np.asarray(data)[idx]


def cross_validate(folds, trainer, data, targets, names=CLASSES) -> CrossValResult:
    """Hold out each fold in turn.

    ``trainer(x_train, y_train)`` must return a callable mapping inputs to
    (n, 2) predictions.
    """
    if len(folds) < 2:
        raise ValueError("need at least 2 folds")
    if any(len(f) == 0 for f in folds):
        raise ValueError("empty fold")
    targets = np.asarray(targets, dtype=np.float64)
    reports = []
    for i, held in enumerate(folds):
        train_idx = np.concatenate([f for j, f in enumerate(folds) if j != i])
        model = trainer(_take(data, train_idx), targets[train_idx])
        pred = model(_take(data, held))
        reports.append(compute_metrics(targets[held], pred, names))
    mean = {
        name: {
            metric: float(np.mean([getattr(r[name], metric) for r in reports]))
            for metric in ("mae_pct", "rmse_pct", "ns", "r2")
        }
        for name in reports[0].classes
    }
    return CrossValResult(reports, mean)
