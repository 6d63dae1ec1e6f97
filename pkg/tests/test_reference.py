import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from subpixel.raster import NODATA, LabelGrid, RasterGrid, synth_scene
from subpixel.reference import (
    ConfusionMatrix,
    UndefinedKappaError,
    UnlabeledClusterError,
    aggregate_fractions,
    assign_classes,
    confusion,
    isodata_cluster,
    kappa,
    read_fractions,
    reference_labels,
    write_fractions,
)

# rows = predicted, columns = actual; order built-up, vegetation, other
BENGALURU = [[132, 5, 34], [2, 105, 14], [7, 1, 100]]
MUMBAI = [[143, 1, 30], [3, 104, 19], [13, 5, 82]]
LABELS = ("built-up", "vegetation", "other")


def _kappa_by_hand(counts):
    c = np.asarray(counts, dtype=float)
    n = c.sum()
    po = np.trace(c) / n
    pe = sum(c[i].sum() * c[:, i].sum() for i in range(len(c))) / n**2
    return (po - pe) / (1 - pe)


# --- clustering ---------------------------------------------------------------


def _image(values, mask=None):
    return RasterGrid(values, cell_size_m=5.0, nodata_mask=mask)


def test_identical_cells_one_cluster():
    ids = isodata_cluster(_image(np.full((3, 10, 10), 0.2)), k_init=5)
    assert np.all(ids == 0)


def _two_means(x, iters=50):
    c = np.array([x[x[:, 0].argmin()], x[x[:, 0].argmax()]])
    for _ in range(iters):
        lab = ((x[:, None] - c[None]) ** 2).sum(axis=2).argmin(axis=1)
        c = np.array([x[lab == k].mean(axis=0) for k in range(2)])
    return lab


def test_two_blobs_match_two_means(rng):
    n = 2000
    centers = np.array([[0.1, 0.1, 0.1], [0.5, 0.4, 0.6]])
    truth = rng.integers(0, 2, n)
    x = centers[truth] + rng.normal(0, 0.03, (n, 3))
    img = _image(x.T.reshape(3, 40, 50))
    ids = isodata_cluster(img, k_init=2, split_sd=1.0, merge_dist=0.05, seed=3).ravel()
    oracle = _two_means(x)
    agree = max(np.mean(ids == oracle), np.mean(ids == 1 - oracle))
    assert len(np.unique(ids)) == 2
    assert agree >= 0.99


def test_clustering_deterministic_and_masked(rng):
    vals = rng.random((3, 20, 20))
    mask = np.zeros((20, 20), dtype=bool)
    mask[0, :5] = True
    a = isodata_cluster(_image(vals, mask), seed=4)
    b = isodata_cluster(_image(vals, mask), seed=4)
    assert np.array_equal(a, b)
    assert np.all(a[0, :5] == -1) and np.all(a[~mask] >= 0)
    # canonical numbering: first unmasked cell belongs to cluster 0
    assert a[0, 5] == 0


def test_empty_region_rejected():
    with pytest.raises(ValueError):
        isodata_cluster(_image(np.ones((3, 2, 2)), np.ones((2, 2), dtype=bool)))


def test_assign_all_vegetation():
    clusters = np.array([[0, 1], [1, 2]])
    labels = assign_classes(clusters, np.full((2, 2), 0.8), ndvi_veg_threshold=0.4)
    assert np.all(labels.labels == 2)


def test_unreachable_threshold_needs_rules():
    clusters = np.array([[0, 1]])
    ndvi = np.array([[0.8, 0.1]])
    with pytest.raises(UnlabeledClusterError):
        assign_classes(clusters, ndvi, ndvi_veg_threshold=1.1)
    labels = assign_classes(clusters, ndvi, 1.1, rules={0: 1, 1: 0})
    assert labels.labels.tolist() == [[1, 0]]


def test_masked_clusters_become_nodata():
    labels = assign_classes(np.array([[-1, 0]]), np.array([[0.0, 0.9]]))
    assert labels.labels.tolist() == [[NODATA, 2]]


def test_reference_map_recovers_synthetic_truth():
    pair = synth_scene(11, 20, 20, 6)
    labels = reference_labels(pair.fine_bands, seed=0)
    assert np.mean(labels.labels == pair.fine.labels) >= 0.95


# --- fractions ----------------------------------------------------------------


def _block(builtup=0, veg=0, nodata=0):
    cells = [1] * builtup + [2] * veg + [NODATA] * nodata
    cells += [0] * (36 - len(cells))
    return LabelGrid(np.array(cells, dtype=np.uint8).reshape(6, 6))


@pytest.mark.parametrize(
    "builtup,veg,expected",
    [(36, 0, (1.0, 0.0)), (9, 0, (0.25, 0.0)), (18, 18, (0.5, 0.5)), (0, 0, (0.0, 0.0)), (1, 35, (1 / 36, 35 / 36))],
)
def test_crafted_blocks(builtup, veg, expected):
    f = aggregate_fractions(_block(builtup, veg), 6)
    assert (f.builtup[0, 0], f.vegetation[0, 0]) == expected
    assert f.valid_mask[0, 0]


def test_nodata_block_invalid():
    assert not aggregate_fractions(_block(3, 3, nodata=1), 6).valid_mask[0, 0]


def test_non_divisible_rejected():
    with pytest.raises(ValueError):
        aggregate_fractions(LabelGrid(np.zeros((7, 6), dtype=np.uint8)), 6)


@given(hnp.arrays(np.uint8, st.tuples(st.integers(1, 4), st.integers(1, 4)).map(lambda s: (6 * s[0], 6 * s[1])), elements=st.sampled_from([0, 1, 2])))
def test_lattice_and_conservation(labels):
    f = aggregate_fractions(LabelGrid(labels), 6)
    for plane, code in ((f.builtup, 1), (f.vegetation, 2)):
        k = plane * 36
        assert np.array_equal(k, np.round(k))
        assert int(k.sum()) == int((labels == code).sum())
    assert np.all(f.builtup + f.vegetation <= 1.0)


def test_fraction_round_trip(tmp_path):
    f = aggregate_fractions(synth_scene(0, 5, 6, 6).fine, 6)
    write_fractions(f, tmp_path / "fr")
    back = read_fractions(tmp_path / "fr")
    assert np.allclose(back.builtup, f.builtup, atol=1e-7)
    assert np.array_equal(back.valid_mask, f.valid_mask)


# --- agreement ----------------------------------------------------------------


def test_table_margins():
    m = ConfusionMatrix(BENGALURU, LABELS)
    assert m.row_totals.tolist() == [171, 121, 108]
    assert m.col_totals.tolist() == [141, 111, 148]
    assert m.total == 400
    assert round(100 * m.class_accuracy()[0], 1) == 93.6


def test_kappa_against_hand_formula():
    for counts in (BENGALURU, MUMBAI):
        assert kappa(ConfusionMatrix(counts, LABELS)) == pytest.approx(_kappa_by_hand(counts), rel=1e-12)


def test_confusion_from_samples():
    pred = [1, 1, 2, 0, 0]
    actual = [1, 2, 2, 0, 1]
    m = confusion(pred, actual, labels=(0, 1, 2))
    assert m.counts.tolist() == [[1, 1, 0], [0, 1, 1], [0, 0, 1]]
    with pytest.raises(ValueError):
        confusion([], [])


def test_perfect_and_independent():
    assert kappa(confusion([0, 1, 2, 1], [0, 1, 2, 1])) == 1.0
    # rows proportional to the column margins -> chance agreement only
    cols = np.array([2, 3, 5])
    counts = np.outer([1, 2, 1], cols)
    assert kappa(ConfusionMatrix(counts, LABELS)) == pytest.approx(0.0, abs=1e-12)


def test_kappa_undefined():
    with pytest.raises(UndefinedKappaError):
        kappa(ConfusionMatrix([[5, 0], [0, 0]], (0, 1)))


@given(hnp.arrays(np.int64, (3, 3), elements=st.integers(0, 50)), st.permutations([0, 1, 2]))
def test_kappa_permutation_invariant(counts, perm):
    counts[0, 0] += 1
    a = ConfusionMatrix(counts, LABELS)
    p = np.asarray(perm)
    b = ConfusionMatrix(counts[np.ix_(p, p)], tuple(LABELS[i] for i in p))
    try:
        ka = kappa(a)
    except UndefinedKappaError:
        with pytest.raises(UndefinedKappaError):
            kappa(b)
        return
    assert kappa(b) == pytest.approx(ka, abs=1e-12)
