"""Raster containers, the two-file on-disk format, alignment and synthetic scenes.

On-disk layout for a grid stored under the base path ``<name>``::

    <name>.hdr.json   {"rows", "cols", "bands", "cell_size_m", "dtype", "order"}
    <name>.bin        rows*cols*bands values, band-sequential, row-major
    <name>.mask.bin   optional, one byte per cell, 0 = valid, 1 = nodata

``dtype`` is ``"f32le"`` for multiband rasters and ``"u8"`` for label grids
(single band). Masked raster cells are written as 0.0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

OTHER, BUILTUP, VEGETATION, NODATA = 0, 1, 2, 255
LABEL_CODES = (OTHER, BUILTUP, VEGETATION, NODATA)

ORDER = "band-sequential,row-major"

# Per-class 7-band signatures (rows: other, built-up, vegetation). Band 6 is
# the thermal band, already on the coarse grid.
COARSE_SIGNATURES = np.array(
    [
        [0.12, 0.14, 0.18, 0.24, 0.32, 0.40, 0.26],
        [0.16, 0.17, 0.20, 0.22, 0.28, 0.55, 0.25],
        [0.06, 0.09, 0.06, 0.42, 0.24, 0.30, 0.11],
    ]
)

# Per-class green, red, NIR signatures of the fine-resolution sensor.
FINE_SIGNATURES = np.array(
    [
        [0.15, 0.18, 0.22],
        [0.20, 0.22, 0.24],
        [0.07, 0.05, 0.40],
    ]
)


class RasterFormatError(ValueError):
    """Header, data and mask files disagree, or values violate the grid invariants."""


class AlignmentError(ValueError):
    """The fine grid cannot cover the coarse grid at the requested factor."""


@dataclass(eq=False)
class RasterGrid:
    """Multiband raster. ``values`` has shape (bands, rows, cols), float32."""

    values: np.ndarray
    cell_size_m: float = 30.0
    nodata_mask: np.ndarray | None = None

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float32)
        if values.ndim == 2:
            values = values[None]
        if values.ndim != 3 or min(values.shape) < 1:
            raise RasterFormatError(f"values must be (bands, rows, cols), got {values.shape}")
        if not self.cell_size_m > 0:
            raise RasterFormatError("cell_size_m must be positive")
        if self.nodata_mask is None:
            mask = np.zeros(values.shape[1:], dtype=bool)
        else:
            mask = np.array(self.nodata_mask, dtype=bool)
            if mask.shape != values.shape[1:]:
                raise RasterFormatError("nodata_mask shape does not match the grid")
        values[:, mask] = 0.0
        if not np.isfinite(values[:, ~mask]).all():
            raise RasterFormatError("non-finite value in an unmasked cell")
        self.values = values
        self.nodata_mask = mask
        self.cell_size_m = float(self.cell_size_m)

    @property
    def bands(self) -> int:
        return self.values.shape[0]

    @property
    def rows(self) -> int:
        return self.values.shape[1]

    @property
    def cols(self) -> int:
        return self.values.shape[2]

    def band(self, number: int) -> np.ndarray:
        """Return band ``number`` using 1-based sensor numbering."""
        return self.values[number - 1]

    def __eq__(self, other):
        if not isinstance(other, RasterGrid):
            return NotImplemented
        return (
            self.cell_size_m == other.cell_size_m
            and self.values.shape == other.values.shape
            and np.array_equal(self.nodata_mask, other.nodata_mask)
            and self.values.tobytes() == other.values.tobytes()
        )


@dataclass(eq=False)
class LabelGrid:
    """Hard-classified raster with codes 0=other, 1=built-up, 2=vegetation, 255=nodata."""

    labels: np.ndarray
    cell_size_m: float = 5.0

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2 or min(labels.shape) < 1:
            raise RasterFormatError(f"labels must be 2-D, got shape {labels.shape}")
        if not np.isin(labels, LABEL_CODES).all():
            raise RasterFormatError("label grid holds codes outside {0, 1, 2, 255}")
        self.labels = labels.astype(np.uint8)

    @property
    def rows(self) -> int:
        return self.labels.shape[0]

    @property
    def cols(self) -> int:
        return self.labels.shape[1]

    def __eq__(self, other):
        if not isinstance(other, LabelGrid):
            return NotImplemented
        return self.cell_size_m == other.cell_size_m and np.array_equal(self.labels, other.labels)


@dataclass
class AlignedPair:
    coarse: RasterGrid
    fine: LabelGrid
    factor: int
    fine_bands: RasterGrid | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.fine.rows != self.coarse.rows * self.factor or self.fine.cols != self.coarse.cols * self.factor:
            raise AlignmentError("fine grid is not exactly factor x the coarse grid")


def _base(path) -> Path:
    path = Path(path)
    name = path.name
    for suffix in (".hdr.json", ".mask.bin", ".bin"):
        if name.endswith(suffix):
            return path.with_name(name[: -len(suffix)])
    return path


def _paths(path):
    base = _base(path)
    return (
        base.with_name(base.name + ".hdr.json"),
        base.with_name(base.name + ".bin"),
        base.with_name(base.name + ".mask.bin"),
    )


def _read_header(hdr_path: Path) -> dict:
    if not hdr_path.exists():
        raise FileNotFoundError(hdr_path)
    header = json.loads(hdr_path.read_text(encoding="utf-8"))
    for key in ("rows", "cols", "bands", "cell_size_m", "dtype"):
        if key not in header:
            raise RasterFormatError(f"header missing key {key!r}")
    if header.get("order", ORDER) != ORDER:
        raise RasterFormatError(f"unsupported order {header['order']!r}")
    return header


def _write_header(hdr_path: Path, header: dict) -> None:
    hdr_path.write_text(json.dumps(header, indent=2) + "\n", encoding="utf-8")


def write_raster(grid: RasterGrid, path, extra: dict | None = None) -> None:
    """Write ``grid`` as ``<path>.hdr.json`` + ``<path>.bin`` (+ ``<path>.mask.bin``).

    ``extra`` keys are merged into the header; readers ignore unknown keys.
    """
    hdr_path, bin_path, mask_path = _paths(path)
    header = {
        "rows": grid.rows,
        "cols": grid.cols,
        "bands": grid.bands,
        "cell_size_m": grid.cell_size_m,
        "dtype": "f32le",
        "order": ORDER,
    }
    if extra:
        header.update(extra)
    _write_header(hdr_path, header)
    bin_path.write_bytes(grid.values.astype("<f4").tobytes())
    if grid.nodata_mask.any():
        mask_path.write_bytes(grid.nodata_mask.astype(np.uint8).tobytes())
    elif mask_path.exists():
        mask_path.unlink()


def read_header(path) -> dict:
    return _read_header(_paths(path)[0])


def read_raster(path) -> RasterGrid:
    """Read a float32 raster container written by :func:`write_raster`."""
    hdr_path, bin_path, mask_path = _paths(path)
    header = _read_header(hdr_path)
    if header["dtype"] != "f32le":
        raise RasterFormatError(f"expected dtype f32le, got {header['dtype']!r}")
    rows, cols, bands = int(header["rows"]), int(header["cols"]), int(header["bands"])
    if min(rows, cols, bands) < 1:
        raise RasterFormatError("rows, cols and bands must be positive")
    if not bin_path.exists():
        raise FileNotFoundError(bin_path)
    raw = bin_path.read_bytes()
    expected = rows * cols * bands * 4
    if len(raw) != expected:
        raise RasterFormatError(f"{bin_path} holds {len(raw)} bytes, header implies {expected}")
    values = np.frombuffer(raw, dtype="<f4").reshape(bands, rows, cols).astype(np.float32)
    mask = None
    if mask_path.exists():
        mraw = mask_path.read_bytes()
        if len(mraw) != rows * cols:
            raise RasterFormatError(f"{mask_path} holds {len(mraw)} bytes, expected {rows * cols}")
        m = np.frombuffer(mraw, dtype=np.uint8)
        if not np.isin(m, (0, 1)).all():
            raise RasterFormatError("mask bytes must be 0 or 1")
        mask = m.reshape(rows, cols).astype(bool)
    return RasterGrid(values, cell_size_m=header["cell_size_m"], nodata_mask=mask)


def write_labels(grid: LabelGrid, path) -> None:
    hdr_path, bin_path, _ = _paths(path)
    _write_header(
        hdr_path,
        {
            "rows": grid.rows,
            "cols": grid.cols,
            "bands": 1,
            "cell_size_m": grid.cell_size_m,
            "dtype": "u8",
            "order": ORDER,
        },
    )
    bin_path.write_bytes(grid.labels.tobytes())


def read_labels(path) -> LabelGrid:
    hdr_path, bin_path, _ = _paths(path)
    header = _read_header(hdr_path)
    if header["dtype"] != "u8" or int(header["bands"]) != 1:
        raise RasterFormatError("label grids are single-band u8")
    rows, cols = int(header["rows"]), int(header["cols"])
    if not bin_path.exists():
        raise FileNotFoundError(bin_path)
    raw = bin_path.read_bytes()
    if len(raw) != rows * cols:
        raise RasterFormatError(f"{bin_path} holds {len(raw)} bytes, header implies {rows * cols}")
    labels = np.frombuffer(raw, dtype=np.uint8).reshape(rows, cols).copy()
    return LabelGrid(labels, cell_size_m=header["cell_size_m"])


def align(coarse: RasterGrid, fine: LabelGrid, factor: int) -> AlignedPair:
    """Pair ``coarse`` with ``fine``, cropping trailing fine rows/cols if needed."""
    if factor < 1:
        raise AlignmentError("factor must be a positive integer")
    need_r, need_c = coarse.rows * factor, coarse.cols * factor
    if fine.rows < need_r or fine.cols < need_c:
        raise AlignmentError(
            f"fine grid {fine.rows}x{fine.cols} cannot cover coarse "
            f"{coarse.rows}x{coarse.cols} at factor {factor}"
        )
    if (fine.rows, fine.cols) != (need_r, need_c):
        fine = LabelGrid(fine.labels[:need_r, :need_c], cell_size_m=fine.cell_size_m)
    return AlignedPair(coarse, fine, factor)


def signature_spread(signatures: np.ndarray = COARSE_SIGNATURES) -> float:
    """Mean over bands of the between-class range of the signatures."""
    return float(np.mean(signatures.max(axis=0) - signatures.min(axis=0)))


def _class_field(rng, shape, sigma, classes):
    fields = []
    for _ in classes:
        noise = rng.standard_normal(shape)
        fields.append(ndimage.gaussian_filter(noise, sigma=sigma, mode="reflect"))
    winner = np.argmax(np.stack(fields), axis=0)
    return np.asarray(classes, dtype=np.uint8)[winner]


def block_fractions(labels: np.ndarray, factor: int) -> np.ndarray:
    """Per-block class fractions, shape (3, rows // factor, cols // factor)."""
    r, c = labels.shape[0] // factor, labels.shape[1] // factor
    blocks = labels[: r * factor, : c * factor].reshape(r, factor, c, factor)
    return np.stack([(blocks == k).sum(axis=(1, 3)) for k in (OTHER, BUILTUP, VEGETATION)]) / factor**2


def synth_scene(
    seed: int,
    coarse_rows: int,
    coarse_cols: int,
    factor: int,
    noise_sd: float = 0.0,
    classes=(OTHER, BUILTUP, VEGETATION),
    patch_scale: float = 1.5,
) -> AlignedPair:
    """Synthesize an aligned coarse/fine scene with known class fractions.

    The fine label grid comes from the argmax of smoothed Gaussian fields, one
    per class, giving patchy class regions about ``patch_scale`` coarse cells
    across. Each coarse cell is the fraction-weighted mixture of the class
    signatures plus independent Gaussian noise of sd ``noise_sd`` per band.
    A matching 3-band fine image (``fine_bands``) is attached for reference-map
    generation.
    """
    if factor < 1:
        raise ValueError("factor must be >= 1")
    rng = np.random.default_rng(seed)
    shape = (coarse_rows * factor, coarse_cols * factor)
    labels = _class_field(rng, shape, sigma=patch_scale * factor, classes=classes)
    fractions = block_fractions(labels, factor)
    mixed = np.einsum("krc,kb->brc", fractions, COARSE_SIGNATURES)
    if noise_sd > 0:
        mixed = mixed + rng.normal(0.0, noise_sd, size=mixed.shape)
    coarse = RasterGrid(mixed, cell_size_m=30.0)
    fine = LabelGrid(labels, cell_size_m=30.0 / factor)
    fine_bands = synth_fine_bands(fine, seed=seed + 1)
    return AlignedPair(coarse, fine, factor, fine_bands=fine_bands)


def synth_fine_bands(fine: LabelGrid, seed: int, noise_sd: float = 0.01) -> RasterGrid:
    """Green/red/NIR image whose cells carry their class signature plus noise."""
    rng = np.random.default_rng(seed)
    labels = fine.labels.copy()
    nodata = labels == NODATA
    labels[nodata] = OTHER
    values = FINE_SIGNATURES[labels].transpose(2, 0, 1)
    if noise_sd > 0:
        values = values + rng.normal(0.0, noise_sd, size=values.shape)
    return RasterGrid(values, cell_size_m=fine.cell_size_m, nodata_mask=nodata)
