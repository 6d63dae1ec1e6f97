import json
import subprocess
import sys

import numpy as np
import pytest

from subpixel.cli import build_parser, main, overrides_from_args
from subpixel.config import load_config
from subpixel.container import read_container, write_container
from subpixel.raster import read_labels, read_raster
from subpixel.reference import aggregate_fractions, read_fractions

SMALL = ["--rows", "24", "--cols", "30", "--factor", "6"]


def _run(*argv):
    assert main([str(a) for a in argv]) == 0


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    common = ["--out", out, "--seed", "5", "--deterministic"]
    _run("synth", *common, *SMALL)
    _run("train", *common, "--sample-count", "500", "--epochs", "1")
    _run("predict", *common)
    _run("evaluate", *common)
    return out, common


def test_container_round_trip(tmp_path):
    arrays = {"a": np.arange(5, dtype=np.float32), "b": np.eye(3, dtype=np.int64)}
    write_container(tmp_path / "c.bin", "demo", {"x": 1}, arrays)
    meta, back = read_container(tmp_path / "c.bin", "demo")
    assert meta == {"x": 1}
    assert all(np.array_equal(back[k], arrays[k]) for k in arrays)
    with pytest.raises(ValueError):
        read_container(tmp_path / "c.bin", "other")


def test_config_precedence(tmp_path):
    cfg_file = tmp_path / "c.json"
    cfg_file.write_text(json.dumps({"seed": 3, "sample_count": 100, "train": {"epochs": 7}, "scene": {"rows": 12}}))
    args = build_parser().parse_args(["train", "--config", str(cfg_file), "--seed", "9", "--lr", "0.01"])
    cfg = load_config(args.config, overrides_from_args(args))
    assert cfg.seed == 9 and cfg.sample_count == 100 and cfg.scene.rows == 12
    tc = cfg.train_config()
    assert tc.epochs == 7 and tc.lr == 0.01 and tc.seed == 9
    assert load_config().sample_count == 15000 and load_config().window == 7


def test_global_flags_before_command(tmp_path):
    args = build_parser().parse_args(["--seed", "4", "--out", str(tmp_path), "synth"])
    cfg = load_config(args.config, overrides_from_args(args))
    assert cfg.seed == 4 and cfg.out == str(tmp_path)


def test_unknown_config_key(tmp_path):
    (tmp_path / "c.json").write_text('{"nonsense": 1}')
    with pytest.raises(ValueError):
        load_config(tmp_path / "c.json")


def test_synth_outputs(workdir):
    out, _ = workdir
    coarse = read_raster(out / "coarse")
    labels = read_labels(out / "labels")
    assert (coarse.rows, coarse.cols, coarse.bands) == (24, 30, 7)
    ref = aggregate_fractions(labels, 6)
    assert np.array_equal(read_fractions(out / "reference").builtup, ref.builtup.astype(np.float32))


def test_train_report(workdir):
    out, _ = workdir
    rep = json.loads((out / "train_report.json").read_text())
    assert rep["split_sizes"] == {"train": 400, "val": 25, "test": 75}
    assert rep["trainable_parameters"] == 669_122
    assert set(rep["test"]["classes"]) == {"built-up", "vegetation"}


def test_prediction_and_error_rasters(workdir):
    out, _ = workdir
    pred = read_fractions(out / "prediction")
    ref = read_fractions(out / "reference")
    assert pred.stack().min() >= 0 and pred.stack().max() <= 1
    err = read_raster(out / "error_builtup").values[0]
    assert np.allclose(err, (pred.builtup - ref.builtup).astype(np.float32), atol=1e-6)


def test_evaluate_reports_both_scales(workdir):
    out, _ = workdir
    rep = json.loads((out / "evaluate.json").read_text())
    assert {"scene_1x1", "scene_3x3", "test_1x1"} <= set(rep["metrics"])
    assert set(rep["assessment"]) == {"1x1", "3x3"}
    assert (out / "roc_3x3_builtup.csv").exists() and (out / "bias_1x1_vegetation.csv").exists()
    lines = (out / "boxplot_1x1_builtup.csv").read_text().splitlines()
    assert len(lines) == 38


def test_evaluate_on_perfect_prediction(workdir, tmp_path):
    out, common = workdir
    import shutil

    for name in ("coarse", "labels", "reference"):
        for ext in (".hdr.json", ".bin"):
            shutil.copy(out / f"{name}{ext}", tmp_path / f"{name}{ext}")
    for ext in (".hdr.json", ".bin"):
        shutil.copy(out / f"reference{ext}", tmp_path / f"prediction{ext}")
    _run("evaluate", "--out", tmp_path, "--factor", "6")
    rep = json.loads((tmp_path / "evaluate.json").read_text())
    assert rep["metrics"]["scene_1x1"]["classes"]["built-up"]["ns"] == 1.0


def test_baselines_and_feature_width(workdir, tmp_path):
    out, common = workdir
    _run("baseline", "rf", *common, "--sample-count", "500", "--n-trees", "3")
    rep = json.loads((out / "baseline_rf.json").read_text())
    assert rep["feature_width"] == 198 and rep["split_sizes"]["test"] == 75
    _run("baseline", "lr", *common, "--sample-count", "500", "--epochs", "1")
    assert json.loads((out / "baseline_lr.json").read_text())["kind"] == "lr"


def test_crossval_three_models(workdir):
    out, common = workdir
    _run("crossval", *common, "--sample-count", "200", "--epochs", "1")
    rep = json.loads((out / "crossval.json").read_text())
    assert len(rep["folds"]) == 3 and rep["fold_sizes"] == [70, 70, 60]


def test_assess_reference(workdir):
    out, common = workdir
    _run("assess-reference", *common, "--n-samples", "300")
    rep = json.loads((out / "assess_reference.json").read_text())
    assert rep["n_samples"] == 300 and rep["confusion"]["total"] == 300
    assert -1 <= rep["kappa"] <= 1
    assert (out / "confusion.csv").read_text().startswith("predicted\\actual")


def test_window_mismatch_fails(workdir, capsys):
    out, common = workdir
    assert main(["predict", *map(str, common), "--window", "5"]) == 1
    assert "window" in capsys.readouterr().err


def test_too_few_cells_fails(tmp_path):
    _run("synth", "--out", tmp_path, "--rows", "5", "--cols", "5")
    assert main(["train", "--out", str(tmp_path), "--sample-count", "26"]) == 1


def test_missing_inputs_exit_code(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "subpixel.cli", "evaluate", "--out", str(tmp_path)], capture_output=True, text=True
    )
    assert proc.returncode == 1 and "error" in proc.stderr


def test_synth_byte_identical(tmp_path):
    for d in ("a", "b"):
        _run("synth", "--out", tmp_path / d, "--seed", "2", *SMALL)
    for name in ("coarse.bin", "labels.bin", "fine.bin", "reference.bin", "coarse.hdr.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
