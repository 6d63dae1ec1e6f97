import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from subpixel.raster import (
    BUILTUP,
    COARSE_SIGNATURES,
    NODATA,
    VEGETATION,
    AlignmentError,
    LabelGrid,
    RasterFormatError,
    RasterGrid,
    align,
    block_fractions,
    read_header,
    read_labels,
    read_raster,
    synth_scene,
    write_labels,
    write_raster,
)


def test_read_small_grid_from_hand_written_files(tmp_path):
    (tmp_path / "g.hdr.json").write_text('{"rows": 2, "cols": 3, "bands": 1, "cell_size_m": 30, "dtype": "f32le"}')
    vals = np.arange(6, dtype="<f4")
    (tmp_path / "g.bin").write_bytes(vals.tobytes())
    g = read_raster(tmp_path / "g")
    assert (g.bands, g.rows, g.cols) == (1, 2, 3)
    assert np.array_equal(g.values[0], vals.reshape(2, 3))


def test_size_mismatch_is_rejected(tmp_path):
    (tmp_path / "g.hdr.json").write_text('{"rows": 2, "cols": 5, "bands": 1, "cell_size_m": 30, "dtype": "f32le"}')
    (tmp_path / "g.bin").write_bytes(np.zeros(9, dtype="<f4").tobytes())
    with pytest.raises(RasterFormatError):
        read_raster(tmp_path / "g")


def test_missing_data_file(tmp_path):
    (tmp_path / "g.hdr.json").write_text('{"rows": 1, "cols": 1, "bands": 1, "cell_size_m": 30, "dtype": "f32le"}')
    with pytest.raises(FileNotFoundError):
        read_raster(tmp_path / "g")


def test_single_value_encoding(tmp_path):
    write_raster(RasterGrid(np.full((1, 1, 1), 0.5)), tmp_path / "one")
    assert (tmp_path / "one.bin").read_bytes() == struct.pack("<f", 0.5)
    assert read_header(tmp_path / "one")["order"] == "band-sequential,row-major"


def test_masked_cell_written_as_zero(tmp_path):
    vals = np.ones((2, 2, 2))
    mask = np.array([[False, True], [False, False]])
    write_raster(RasterGrid(vals, nodata_mask=mask), tmp_path / "m")
    raw = np.frombuffer((tmp_path / "m.bin").read_bytes(), dtype="<f4").reshape(2, 2, 2)
    assert np.all(raw[:, 0, 1] == 0.0)
    assert list((tmp_path / "m.mask.bin").read_bytes()) == [0, 1, 0, 0]
    back = read_raster(tmp_path / "m")
    assert np.array_equal(back.nodata_mask, mask)


def test_non_finite_unmasked_value_rejected():
    vals = np.ones((1, 2, 2))
    vals[0, 0, 0] = np.nan
    with pytest.raises(RasterFormatError):
        RasterGrid(vals)
    RasterGrid(vals, nodata_mask=np.array([[True, False], [False, False]]))


@given(
    hnp.arrays(
        np.float32,
        hnp.array_shapes(min_dims=3, max_dims=3, min_side=1, max_side=6),
        elements=st.floats(-1e6, 1e6, width=32),
    ),
    st.data(),
)
def test_round_trip_bit_exact(tmp_path_factory, values, data):
    mask = data.draw(hnp.arrays(bool, values.shape[1:]))
    g = RasterGrid(values, cell_size_m=30.0, nodata_mask=mask)
    path = tmp_path_factory.mktemp("rt") / "g"
    write_raster(g, path)
    assert read_raster(path) == g


def test_label_round_trip_and_validation(tmp_path):
    labels = np.array([[0, 1], [2, 255]], dtype=np.uint8)
    write_labels(LabelGrid(labels), tmp_path / "l")
    assert np.array_equal(read_labels(tmp_path / "l").labels, labels)
    with pytest.raises(RasterFormatError):
        LabelGrid(np.array([[3]]))


def _grids(fine_rows, fine_cols):
    return RasterGrid(np.zeros((7, 10, 10))), LabelGrid(np.zeros((fine_rows, fine_cols), dtype=np.uint8))


def test_align_exact_multiple():
    c, f = _grids(60, 60)
    pair = align(c, f, 6)
    assert pair.coarse is c and pair.fine.rows == 60


def test_align_crops_trailing_rows():
    c, f = _grids(61, 60)
    f.labels[60] = 2
    pair = align(c, f, 6)
    assert (pair.fine.rows, pair.fine.cols) == (60, 60)
    assert not (pair.fine.labels == 2).any()


def test_align_insufficient_coverage():
    c, f = _grids(59, 60)
    with pytest.raises(AlignmentError):
        align(c, f, 6)


@pytest.mark.parametrize("cls", [0, 1, 2])
def test_single_class_scene_equals_signature(cls):
    pair = synth_scene(0, 4, 5, 6, classes=(cls,))
    assert np.all(pair.fine.labels == cls)
    expected = COARSE_SIGNATURES[cls].astype(np.float32)
    assert np.array_equal(pair.coarse.values, np.broadcast_to(expected[:, None, None], (7, 4, 5)))


def test_synth_scene_deterministic():
    a, b = synth_scene(5, 6, 7, 6, 0.01), synth_scene(5, 6, 7, 6, 0.01)
    assert a.coarse == b.coarse and a.fine == b.fine and a.fine_bands == b.fine_bands
    assert synth_scene(6, 6, 7, 6).fine != a.fine


@given(st.integers(0, 10_000), st.integers(1, 4), st.integers(1, 4), st.integers(1, 6))
def test_noiseless_scene_is_convex_mixture(seed, rows, cols, factor):
    pair = synth_scene(seed, rows, cols, factor)
    fr = block_fractions(pair.fine.labels, factor)
    assert np.allclose(fr.sum(axis=0), 1.0)
    mixed = np.einsum("krc,kb->brc", fr, COARSE_SIGNATURES)
    assert np.allclose(pair.coarse.values, mixed, atol=1e-6)
    assert pair.fine.labels.shape == (rows * factor, cols * factor)
    assert not np.isin(pair.fine.labels, [NODATA]).any()


def test_synth_scene_has_all_classes():
    pair = synth_scene(0, 30, 30, 6)
    assert {0, BUILTUP, VEGETATION} <= set(np.unique(pair.fine.labels).tolist())
