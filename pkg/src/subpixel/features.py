"""Spectral indices and assembly of the (w, w, 6, n) network input tensor.

Planes of the tensor, per sample:

    0-3  w x w neighborhoods of bands 1-4 (mirror padded at the scene edge)
    4    EBBI of the center cell, replicated over the window
    5    band 7 of the center cell, replicated over the window
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .raster import RasterGrid, read_header, read_raster, write_raster

N_PLANES = 6


class SingularInputError(ValueError):
    """EBBI denominator b5 + b6 is not positive."""


class NodataError(ValueError):
    """A requested neighborhood touches a nodata cell."""


def ebbi(b4, b5, b6):
    """Enhanced Built-Up and Bareness Index, (b5 - b4) / (10 sqrt(b5 + b6)).

    Raises SingularInputError where b5 + b6 <= 0; use :func:`ebbi_grid` for
    the substitute-and-flag behavior.
    """
    b4, b5, b6 = (np.asarray(b, dtype=np.float64) for b in (b4, b5, b6))
    denom = b5 + b6
    if np.any(denom <= 0):
        raise SingularInputError("EBBI undefined for b5 + b6 <= 0")
    out = (b5 - b4) / (10.0 * np.sqrt(denom))
    return float(out) if out.ndim == 0 else out


def ebbi_grid(b4, b5, b6):
    """EBBI over arrays; singular cells get 0. Returns (values, singular_mask)."""
    b4, b5, b6 = (np.asarray(b, dtype=np.float64) for b in (b4, b5, b6))
    denom = b5 + b6
    singular = ~(denom > 0)
    safe = np.where(singular, 1.0, denom)
    values = np.where(singular, 0.0, (b5 - b4) / (10.0 * np.sqrt(safe)))
    return values, singular


def ndvi(red, nir, return_flag: bool = False):
    """(nir - red) / (nir + red); a zero denominator yields 0 (flagged on request)."""
    red, nir = np.asarray(red, dtype=np.float64), np.asarray(nir, dtype=np.float64)
    denom = nir + red
    zero = denom == 0
    out = np.where(zero, 0.0, (nir - red) / np.where(zero, 1.0, denom))
    if out.ndim == 0:
        out, zero = float(out), bool(zero)
    return (out, zero) if return_flag else out


def symmetric_pad(band: np.ndarray, margin: int) -> np.ndarray:
    """Mirror-pad a 2-D grid by ``margin`` cells, edge cells included in the mirror."""
    if margin < 0:
        raise ValueError("margin must be >= 0")
    return np.pad(np.asarray(band), margin, mode="symmetric")


@dataclass
class InputTensor:
    """Network input. ``values`` has shape (window, window, 6, n)."""

    values: np.ndarray
    sample_index: np.ndarray
    grid_shape: tuple[int, int]
    singular: np.ndarray | None = None

    def __post_init__(self):
        self.sample_index = np.asarray(self.sample_index, dtype=np.int64).reshape(-1, 2)
        if self.singular is None:
            self.singular = np.zeros(self.n, dtype=bool)
        self.grid_shape = tuple(int(v) for v in self.grid_shape)

    @property
    def window(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[3]

    def __len__(self) -> int:
        return self.n

    def nchw(self) -> np.ndarray:
        """Samples-first view, shape (n, 6, window, window)."""
        return np.ascontiguousarray(self.values.transpose(3, 2, 0, 1))

    def take(self, idx) -> "InputTensor":
        idx = np.asarray(idx)
        return InputTensor(
            self.values[..., idx], self.sample_index[idx], self.grid_shape, self.singular[idx]
        )


def _check_window(window: int) -> int:
    if window < 1 or window % 2 == 0:
        raise ValueError(f"window must be a positive odd integer, got {window}")
    return (window - 1) // 2


def valid_cells(coarse: RasterGrid, window: int) -> np.ndarray:
    """Cells usable as samples: neighborhood free of nodata and EBBI defined."""
    margin = _check_window(window)
    mask = symmetric_pad(coarse.nodata_mask, margin)
    touched = sliding_window_view(mask, (window, window)).any(axis=(2, 3))
    _, singular = ebbi_grid(coarse.band(4), coarse.band(5), coarse.band(6))
    return ~touched & ~singular


def build_tensor(coarse: RasterGrid, window: int = 7, selection=None) -> InputTensor:
    """Assemble the input tensor for the cells in ``selection`` (all cells if None)."""
    if coarse.bands < 7:
        raise ValueError("coarse raster needs at least 7 bands")
    margin = _check_window(window)
    if selection is None:
        rr, cc = np.meshgrid(np.arange(coarse.rows), np.arange(coarse.cols), indexing="ij")
        selection = np.column_stack([rr.ravel(), cc.ravel()])
    sel = np.asarray(selection, dtype=np.int64).reshape(-1, 2)
    rows, cols = sel[:, 0], sel[:, 1]
    if sel.size and (
        rows.min() < 0 or cols.min() < 0 or rows.max() >= coarse.rows or cols.max() >= coarse.cols
    ):
        raise IndexError("selection index out of range")

    mask = symmetric_pad(coarse.nodata_mask, margin)
    touched = sliding_window_view(mask, (window, window)).any(axis=(2, 3))
    if touched[rows, cols].any():
        raise NodataError("neighborhood touches a nodata cell")

    padded = np.stack([symmetric_pad(coarse.band(b), margin) for b in (1, 2, 3, 4)])
    windows = sliding_window_view(padded, (window, window), axis=(1, 2))
    patches = windows[:, rows, cols]  # (4, n, w, w)

    index, singular = ebbi_grid(coarse.band(4), coarse.band(5), coarse.band(6))
    n = len(sel)
    values = np.empty((window, window, N_PLANES, n), dtype=np.float32)
    values[:, :, :4, :] = patches.transpose(2, 3, 0, 1)
    values[:, :, 4, :] = index[rows, cols].astype(np.float32)
    values[:, :, 5, :] = coarse.band(7)[rows, cols]
    return InputTensor(values, sel, (coarse.rows, coarse.cols), singular[rows, cols])


@dataclass
class Standardizer:
    """Per-channel affine scaling; ``mean``/``std`` broadcast against (n, channels, ...)."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray) -> "Standardizer":
        x = np.asarray(x, dtype=np.float64)
        axes = (0,) + tuple(range(2, x.ndim))
        mean = x.mean(axis=axes)
        std = x.std(axis=axes)
        std = np.where(std > 0, std, 1.0)
        return cls(mean, std)

    @classmethod
    def identity(cls, channels: int) -> "Standardizer":
        return cls(np.zeros(channels), np.ones(channels))

    def apply(self, x: np.ndarray, dtype=np.float32) -> np.ndarray:
        shape = (1, -1) + (1,) * (x.ndim - 2)
        mean = np.asarray(self.mean).reshape(shape)
        std = np.asarray(self.std).reshape(shape)
        return ((x - mean) / std).astype(dtype)


def write_tensor(t: InputTensor, path) -> None:
    """Persist as a raster container: rows = n, cols = 1, bands = w*w*6.

    Band ``(plane * w + i) * w + j`` holds patch cell (i, j) of ``plane``.
    """
    w = t.window
    flat = t.values.transpose(2, 0, 1, 3).reshape(N_PLANES * w * w, t.n, 1)
    extra = {
        "kind": "input_tensor",
        "window": w,
        "planes": N_PLANES,
        "grid_rows": t.grid_shape[0],
        "grid_cols": t.grid_shape[1],
        "sample_index": t.sample_index.tolist(),
        "singular": np.flatnonzero(t.singular).tolist(),
    }
    write_raster(RasterGrid(flat, cell_size_m=1.0), path, extra=extra)


def read_tensor(path) -> InputTensor:
    header = read_header(path)
    if header.get("kind") != "input_tensor":
        raise ValueError(f"{path} is not an input tensor container")
    grid = read_raster(path)
    w = int(header["window"])
    n = grid.rows
    values = grid.values.reshape(N_PLANES, w, w, n).transpose(1, 2, 0, 3).copy()
    singular = np.zeros(n, dtype=bool)
    singular[header["singular"]] = True
    return InputTensor(
        values, header["sample_index"], (header["grid_rows"], header["grid_cols"]), singular
    )
