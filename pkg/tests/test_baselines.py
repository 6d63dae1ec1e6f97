import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from subpixel.baselines import (
    feature_width,
    flatten_features,
    load_forest,
    lr_fit,
    lr_predict,
    rf_fit,
    rf_predict,
    save_forest,
)
from subpixel.baselines.forest import build_tree, oob_r2, rf_predict_raw
from subpixel.features import build_tensor, ebbi, symmetric_pad
from subpixel.nn import TrainConfig
from subpixel.raster import RasterGrid, synth_scene


def test_feature_widths():
    assert feature_width(7) == 198
    assert feature_width(3) == 38


def test_flatten_matches_direct_extraction(rng):
    g = RasterGrid(rng.uniform(0.05, 0.6, (7, 6, 8)))
    sel = [(0, 0), (3, 5), (5, 7)]
    rows = flatten_features(build_tensor(g, 5, sel))
    assert rows.shape == (3, 102)
    for k, (r, c) in enumerate(sel):
        expected = []
        for b in (1, 2, 3, 4):
            expected += list(symmetric_pad(g.band(b), 2)[r : r + 5, c : c + 5].ravel())
        expected.append(np.float32(ebbi(g.band(4)[r, c], g.band(5)[r, c], g.band(6)[r, c])))
        expected.append(g.band(7)[r, c])
        assert np.allclose(rows[k], expected, rtol=1e-6)


def test_constant_scene_rows_identical():
    rows = flatten_features(build_tensor(RasterGrid(np.full((7, 4, 4), 0.3)), 3))
    assert np.all(rows == rows[0])


# --- linear regression --------------------------------------------------------------


def test_exactly_linear_targets(rng):
    x = rng.standard_normal((400, 12))
    w = rng.uniform(-0.02, 0.02, (12, 2))
    y = 0.5 + x @ w
    model = lr_fit(x, y, TrainConfig(epochs=150, batch_size=64, lr=3e-3))
    mae = np.mean(np.abs(lr_predict(model, x) - y)) * 100
    assert mae < 0.5
    exact = lr_fit(x, y, method="lstsq")
    assert np.mean(np.abs(lr_predict(exact, x) - y)) * 100 < 1e-4


def test_constant_target(rng):
    x = rng.standard_normal((200, 5))
    y = np.tile([0.3, 0.6], (200, 1))
    model = lr_fit(x, y, TrainConfig(epochs=100, batch_size=50, lr=1e-2))
    assert np.allclose(lr_predict(model, x), y, atol=5e-3)


def test_lr_clipping_and_degenerate(rng):
    x = rng.standard_normal((50, 3))
    model = lr_fit(x, np.tile([-0.1, 1.3], (50, 1)), method="lstsq")
    assert np.allclose(lr_predict(model, x), [0.0, 1.0])
    with pytest.raises(ValueError):
        lr_fit(np.ones((10, 3)), np.zeros((10, 2)))


def test_lr_noiseless_scene_below_one_percent():
    pair = synth_scene(2, 30, 30, 6)
    from subpixel.reference import aggregate_fractions

    ref = aggregate_fractions(pair.fine, 6)
    t = build_tensor(pair.coarse, 7)
    y = ref.samples(t.sample_index)
    rows = flatten_features(t)
    model = lr_fit(rows, y, method="lstsq")
    assert np.mean(np.abs(lr_predict(model, rows) - y)) * 100 < 1.0


# --- random forest ------------------------------------------------------------------


def test_single_unrestricted_tree_memorizes(rng):
    x = rng.permutation(np.arange(32.0))[:, None] + rng.random((32, 3))
    y = rng.random((32, 2))
    f = rf_fit(x, y, n_trees=1, max_features=4, min_leaf=1, bootstrap=False)
    assert np.array_equal(rf_predict_raw(f, x), y)


@given(st.integers(2, 32), st.integers(0, 10_000))
def test_memorization_property(n, seed):
    rng = np.random.default_rng(seed)
    x = rng.random((n, 3))
    y = rng.random((n, 2))
    f = rf_fit(x, y, n_trees=1, max_features=3, min_leaf=1, bootstrap=False, seed=seed)
    assert np.allclose(rf_predict_raw(f, x), y, rtol=0, atol=1e-15)


def test_constant_target_forest(rng):
    x = rng.random((40, 4))
    y = np.tile([0.25, 0.5], (40, 1))
    f = rf_fit(x, y, n_trees=5, seed=1)
    assert np.all(rf_predict(f, rng.random((7, 4))) == [0.25, 0.5])
    assert not f.oob_defined and math.isnan(f.oob_score)


def test_rejects_zero_trees(rng):
    with pytest.raises(ValueError):
        rf_fit(rng.random((5, 2)), rng.random((5, 2)), n_trees=0)


def test_same_seed_same_forest(rng, tmp_path):
    x, y = rng.random((60, 5)), rng.random((60, 2))
    a, b = rf_fit(x, y, 7, seed=3), rf_fit(x, y, 7, seed=3)
    assert np.array_equal(rf_predict_raw(a, x), rf_predict_raw(b, x))
    save_forest(a, tmp_path / "a.bin")
    save_forest(b, tmp_path / "b.bin")
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()
    c = load_forest(tmp_path / "a.bin")
    assert np.array_equal(rf_predict_raw(c, x), rf_predict_raw(a, x))
    assert c.oob_score == a.oob_score


def test_identical_trees_average_to_one_tree(rng):
    x, y = rng.random((30, 3)), rng.random((30, 2))
    f = rf_fit(x, y, 1, max_features=3, seed=0)
    f.trees = f.trees * 4
    assert np.allclose(rf_predict_raw(f, x), f.trees[0].predict(x))


def test_prediction_within_leaf_extrema(rng):
    x, y = rng.random((80, 4)), rng.random((80, 2))
    f = rf_fit(x, y, 9, seed=5)
    q = rng.random((25, 4))
    leaves = np.stack([t.predict(q) for t in f.trees])
    pred = rf_predict_raw(f, q)
    assert np.all(pred >= leaves.min(axis=0) - 1e-12) and np.all(pred <= leaves.max(axis=0) + 1e-12)
    assert np.all((pred >= 0) & (pred <= 1))


def _brute_oob(forest, x, y):
    n = len(x)
    sums, hits = np.zeros_like(y), np.zeros(n)
    for b, tree in enumerate(forest.trees):
        for i in range(n):
            if forest.bootstrap_counts[b, i] == 0:
                sums[i] += tree.predict(x[i : i + 1])[0]
                hits[i] += 1
    keep = hits > 0
    pred = sums[keep] / hits[keep, None]
    t = y[keep]
    scores = []
    for k in range(y.shape[1]):
        ss_res = sum((t[i, k] - pred[i, k]) ** 2 for i in range(len(t)))
        mu = sum(t[:, k]) / len(t)
        ss_tot = sum((v - mu) ** 2 for v in t[:, k])
        scores.append(1 - ss_res / ss_tot)
    return sum(scores) / len(scores)


@pytest.mark.parametrize("n,seed", [(16, 0), (40, 1), (64, 2)])
def test_oob_matches_brute_force(n, seed):
    rng = np.random.default_rng(seed)
    x = rng.random((n, 5))
    y = np.column_stack([x[:, 0] + 0.1 * rng.random(n), x[:, 1] * x[:, 2]])
    f = rf_fit(x, y, n_trees=15, min_leaf=2, seed=seed)
    assert f.oob_defined
    assert f.oob_score == pytest.approx(_brute_oob(f, x, y), rel=1e-10)


def test_oob_r2_undefined_cases():
    assert oob_r2(np.ones((3, 1)), np.ones((3, 1)), np.array([True] * 3))[1] is False
    assert oob_r2(np.ones((3, 1)), np.ones((3, 1)), np.zeros(3, dtype=bool))[1] is False


def test_min_leaf_respected(rng):
    x, y = rng.random((100, 3)), rng.random((100, 2))
    tree = build_tree(x, y, 3, 7, np.random.default_rng(0))
    counts = np.bincount(tree.apply(x), minlength=tree.n_nodes)
    assert counts[tree.feature < 0].min() >= 7


def test_rf_beats_mean_on_scene():
    pair = synth_scene(4, 30, 30, 6, noise_sd=0.01)
    from subpixel.reference import aggregate_fractions

    y = aggregate_fractions(pair.fine, 6).samples(np.argwhere(np.ones((30, 30))))
    rows = flatten_features(build_tensor(pair.coarse, 7))
    tr, te = np.arange(0, 900, 2), np.arange(1, 900, 2)
    f = rf_fit(rows[tr], y[tr], n_trees=20, seed=0)
    assert f.params["max_features"] == 14
    rmse = np.sqrt(np.mean((rf_predict(f, rows[te]) - y[te]) ** 2, axis=0))
    rmse_mean = np.sqrt(np.mean((y[tr].mean(axis=0) - y[te]) ** 2, axis=0))
    assert np.all(rmse < rmse_mean)
