"""Reference maps: ISODATA clustering, NDVI-assisted labeling, block fractions,
confusion matrices and Cohen's kappa."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .features import ndvi
from .raster import (
    BUILTUP,
    FINE_SIGNATURES,
    NODATA,
    OTHER,
    VEGETATION,
    LabelGrid,
    RasterGrid,
    read_raster,
    write_raster,
)

CLASS_NAMES = {OTHER: "other", BUILTUP: "built-up", VEGETATION: "vegetation"}


class UnlabeledClusterError(ValueError):
    pass


class UndefinedKappaError(ValueError):
    pass


# --- clustering -------------------------------------------------------------


def _nearest(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    d2 = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d2, axis=1)


def _seed_centers(x, k, rng):
    """k-means++ seeding."""
    centers = [x[rng.integers(len(x))]]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = rng.choice(len(x), p=d2 / total)
        else:
            idx = rng.integers(len(x))
        centers.append(x[idx])
        d2 = np.minimum(d2, ((x - x[idx]) ** 2).sum(axis=1))
    return np.array(centers)


def _merge_close(centers, counts, merge_dist):
    centers, counts = [c for c in centers], [int(n) for n in counts]
    while len(centers) > 1:
        arr = np.array(centers)
        d = np.sqrt(((arr[:, None] - arr[None]) ** 2).sum(axis=2))
        np.fill_diagonal(d, np.inf)
        i, j = np.unravel_index(np.argmin(d), d.shape)
        if d[i, j] >= merge_dist:
            break
        i, j = min(i, j), max(i, j)
        n = counts[i] + counts[j]
        centers[i] = (centers[i] * counts[i] + centers[j] * counts[j]) / max(n, 1)
        counts[i] = n
        del centers[j], counts[j]
    return np.array(centers), np.array(counts)


def isodata_cluster(
    fine_bands: RasterGrid,
    k_init: int = 10,
    max_iter: int = 20,
    split_sd: float = 0.05,
    merge_dist: float = 0.05,
    seed: int = 0,
    min_size: int = 20,
    max_clusters: int | None = None,
) -> np.ndarray:
    """ISODATA clustering of the unmasked cells of a multiband image.

    Each iteration assigns cells to the nearest center, drops clusters smaller
    than ``min_size``, splits clusters whose largest per-band standard
    deviation exceeds ``split_sd`` (along that band, centers offset by one
    sd), then merges centers closer than ``merge_dist``. Stops when the
    labeling is stable or after ``max_iter`` iterations.

    Returns an int grid of cluster ids, numbered in raster order of first
    appearance; masked cells get -1.
    """
    if k_init < 1:
        raise ValueError("k_init must be >= 1")
    if fine_bands.bands < 2:
        raise ValueError("ISODATA needs at least 2 bands")
    valid = ~fine_bands.nodata_mask
    x = fine_bands.values[:, valid].T.astype(np.float64)
    if len(x) == 0:
        raise ValueError("no unmasked cells to cluster")
    rng = np.random.default_rng(seed)
    max_k = max_clusters or 2 * k_init

    centers = _seed_centers(x, min(k_init, len(x)), rng)
    assign = None
    for _ in range(max_iter):
        new = _nearest(x, centers)
        counts = np.bincount(new, minlength=len(centers))
        keep = counts >= min_size
        if not keep.any():
            keep = counts > 0
        if not keep.all():
            centers = centers[keep]
            new = _nearest(x, centers)
            counts = np.bincount(new, minlength=len(centers))
        centers = np.array([x[new == c].mean(axis=0) for c in range(len(centers))])

        changed = False
        split = []
        for c in range(len(centers)):
            members = x[new == c]
            sd = members.std(axis=0)
            band = int(np.argmax(sd))
            if (
                sd[band] > split_sd
                and len(members) >= 2 * min_size
                and len(centers) + len(split) // 2 < max_k
            ):
                offset = np.zeros_like(centers[c])
                offset[band] = sd[band]
                split += [centers[c] + offset, centers[c] - offset]
                changed = True
            else:
                split.append(centers[c])
        if changed:
            centers = np.array(split)
            new = _nearest(x, centers)
            counts = np.bincount(new, minlength=len(centers))
            live = counts > 0
            centers = np.array([x[new == c].mean(axis=0) for c in np.flatnonzero(live)])
            counts = counts[live]

        merged, counts = _merge_close(centers, counts, merge_dist)
        if len(merged) != len(centers):
            changed = True
        centers = merged

        stable = assign is not None and not changed and np.array_equal(new, assign)
        assign = new
        if stable:
            break

    assign = _nearest(x, centers)
    # canonical numbering: order of first appearance in raster order
    _, first = np.unique(assign, return_index=True)
    order = np.unique(assign)[np.argsort(first)]
    remap = np.empty(len(centers), dtype=np.int64)
    remap[order] = np.arange(len(order))
    out = np.full(fine_bands.nodata_mask.shape, -1, dtype=np.int64)
    out[valid] = remap[assign]
    return out


def assign_classes(
    clusters: np.ndarray,
    ndvi_grid: np.ndarray,
    ndvi_veg_threshold: float = 0.3,
    rules: dict | None = None,
) -> LabelGrid:
    """Label clusters: vegetation when the cluster's mean NDVI reaches the
    threshold, otherwise by ``rules`` (cluster id -> class code)."""
    clusters = np.asarray(clusters)
    ndvi_grid = np.asarray(ndvi_grid, dtype=np.float64)
    if clusters.shape != ndvi_grid.shape:
        raise ValueError("cluster and NDVI grids differ in shape")
    rules = {int(k): int(v) for k, v in (rules or {}).items()}
    labels = np.full(clusters.shape, NODATA, dtype=np.uint8)
    for cid in np.unique(clusters[clusters >= 0]):
        members = clusters == cid
        if ndvi_grid[members].mean() >= ndvi_veg_threshold:
            labels[members] = VEGETATION
        elif int(cid) in rules:
            code = rules[int(cid)]
            if code not in CLASS_NAMES:
                raise ValueError(f"rule for cluster {cid} maps to unknown class {code}")
            labels[members] = code
        else:
            raise UnlabeledClusterError(f"cluster {cid} has no rule and is not vegetation")
    return LabelGrid(labels)


def rules_from_signatures(
    fine_bands: RasterGrid, clusters: np.ndarray, signatures: np.ndarray = FINE_SIGNATURES
) -> dict[int, int]:
    """Label each cluster with the class whose signature is nearest its centroid.

    Stands in for the analyst's interpretation step when class signatures are
    known, as they are for synthetic scenes.
    """
    rules = {}
    for cid in np.unique(clusters[clusters >= 0]):
        centroid = fine_bands.values[:, clusters == cid].mean(axis=1)
        rules[int(cid)] = int(np.argmin(((signatures - centroid) ** 2).sum(axis=1)))
    return rules


def reference_labels(
    fine_bands: RasterGrid,
    k_init: int = 10,
    max_iter: int = 20,
    split_sd: float = 0.05,
    merge_dist: float = 0.05,
    seed: int = 0,
    ndvi_veg_threshold: float = 0.3,
    rules: dict | None = None,
    red_band: int = 2,
    nir_band: int = 3,
) -> LabelGrid:
    """ISODATA + NDVI reference map; missing rules come from the signatures."""
    clusters = isodata_cluster(fine_bands, k_init, max_iter, split_sd, merge_dist, seed)
    index = ndvi(fine_bands.band(red_band), fine_bands.band(nir_band))
    if rules is None:
        rules = rules_from_signatures(fine_bands, clusters)
    grid = assign_classes(clusters, index, ndvi_veg_threshold, rules)
    return LabelGrid(grid.labels, cell_size_m=fine_bands.cell_size_m)


# --- fractions ----------------------------------------------------------------


@dataclass
class FractionMap:
    builtup: np.ndarray
    vegetation: np.ndarray
    valid_mask: np.ndarray

    def __post_init__(self):
        self.builtup = np.asarray(self.builtup, dtype=np.float64)
        self.vegetation = np.asarray(self.vegetation, dtype=np.float64)
        self.valid_mask = np.asarray(self.valid_mask, dtype=bool)
        if not (self.builtup.shape == self.vegetation.shape == self.valid_mask.shape):
            raise ValueError("fraction planes and mask must share a shape")

    @property
    def rows(self) -> int:
        return self.builtup.shape[0]

    @property
    def cols(self) -> int:
        return self.builtup.shape[1]

    def stack(self) -> np.ndarray:
        """(2, rows, cols) array: built-up then vegetation."""
        return np.stack([self.builtup, self.vegetation])

    def samples(self, index) -> np.ndarray:
        """(n, 2) fractions at the (row, col) pairs in ``index``."""
        index = np.asarray(index).reshape(-1, 2)
        return np.column_stack(
            [self.builtup[index[:, 0], index[:, 1]], self.vegetation[index[:, 0], index[:, 1]]]
        )


def aggregate_fractions(fine: LabelGrid, factor: int) -> FractionMap:
    """Built-up and vegetation share of each factor x factor block of ``fine``."""
    if factor < 1 or fine.rows % factor or fine.cols % factor:
        raise ValueError(f"fine grid {fine.rows}x{fine.cols} not divisible by {factor}")
    r, c = fine.rows // factor, fine.cols // factor
    blocks = fine.labels.reshape(r, factor, c, factor)
    cells = factor * factor
    builtup = (blocks == BUILTUP).sum(axis=(1, 3)) / cells
    vegetation = (blocks == VEGETATION).sum(axis=(1, 3)) / cells
    valid = ~(blocks == NODATA).any(axis=(1, 3))
    return FractionMap(builtup, vegetation, valid)


def write_fractions(fmap: FractionMap, path, cell_size_m: float = 30.0) -> None:
    write_raster(RasterGrid(fmap.stack(), cell_size_m, nodata_mask=~fmap.valid_mask), path)


def read_fractions(path) -> FractionMap:
    grid = read_raster(path)
    if grid.bands != 2:
        raise ValueError("fraction maps have exactly 2 bands")
    v = grid.values.astype(np.float64)
    return FractionMap(v[0], v[1], ~grid.nodata_mask)


# --- agreement ----------------------------------------------------------------


@dataclass
class ConfusionMatrix:
    """``counts[i, j]`` = samples predicted as ``labels[i]`` whose actual class is ``labels[j]``."""

    counts: np.ndarray
    labels: tuple

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        k = len(self.labels)
        if self.counts.shape != (k, k):
            raise ValueError("counts must be k x k for k labels")
        if (self.counts < 0).any() or self.total <= 0:
            raise ValueError("counts must be nonnegative with a positive total")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def row_totals(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def col_totals(self) -> np.ndarray:
        return self.counts.sum(axis=0)

    def class_accuracy(self) -> np.ndarray:
        """Correct / actual total per class (column-wise)."""
        cols = self.col_totals
        return np.divide(np.diag(self.counts), cols, out=np.full(len(cols), np.nan), where=cols > 0)

    def overall_accuracy(self) -> float:
        return float(np.trace(self.counts) / self.total)

    def to_dict(self) -> dict:
        return {
            "labels": [str(v) for v in self.labels],
            "counts": self.counts.tolist(),
            "row_totals": self.row_totals.tolist(),
            "col_totals": self.col_totals.tolist(),
            "total": self.total,
            "class_accuracy_pct": [round(float(a) * 100, 6) for a in self.class_accuracy()],
            "overall_accuracy_pct": round(self.overall_accuracy() * 100, 6),
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        names = [str(v) for v in self.labels]
        w.writerow(["predicted\\actual", *names, "row_total"])
        for name, row, tot in zip(names, self.counts, self.row_totals):
            w.writerow([name, *row.tolist(), int(tot)])
        w.writerow(["column_total", *self.col_totals.tolist(), self.total])
        w.writerow(["accuracy_pct", *[f"{a * 100:.1f}" for a in self.class_accuracy()], ""])
        return buf.getvalue()


def confusion(pred, actual, labels=None) -> ConfusionMatrix:
    pred, actual = np.asarray(pred).ravel(), np.asarray(actual).ravel()
    if len(pred) == 0:
        raise ValueError("empty input")
    if len(pred) != len(actual):
        raise ValueError("pred and actual differ in length")
    if labels is None:
        labels = tuple(np.unique(np.concatenate([pred, actual])).tolist())
    lookup = {v: i for i, v in enumerate(labels)}
    k = len(labels)
    try:
        pi = np.array([lookup[v] for v in pred.tolist()])
        ai = np.array([lookup[v] for v in actual.tolist()])
    except KeyError as exc:
        raise ValueError(f"class {exc.args[0]!r} not in the label alphabet") from None
    counts = np.bincount(pi * k + ai, minlength=k * k).reshape(k, k)
    return ConfusionMatrix(counts, tuple(labels))


def kappa(m: ConfusionMatrix) -> float:
    """Cohen's kappa, (p_o - p_e) / (1 - p_e)."""
    total = float(m.total)
    p_o = np.trace(m.counts) / total
    p_e = float((m.row_totals.astype(np.float64) * m.col_totals).sum()) / total**2
    if p_e == 1.0:
        raise UndefinedKappaError("chance agreement is 1; kappa undefined")
    return float((p_o - p_e) / (1.0 - p_e))
