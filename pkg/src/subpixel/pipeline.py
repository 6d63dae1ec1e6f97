"""End-to-end commands behind the CLI. Each takes a RunConfig and returns the
paths it wrote. Reports are written with sorted keys and no timestamps so a
fixed seed reproduces them byte for byte."""

from __future__ import annotations

import csv
import json
import logging
from pathlib import Path

import numpy as np

from . import baselines as bl
from .config import RunConfig
from .evaluation import (
    CLASSES,
    CSV_HEADER,
    aggregate_blocks,
    bias_histogram,
    boxplot_summary,
    compute_metrics,
    cross_validate,
    kfold_split,
    paired_samples,
    roc_analysis,
)
from .features import build_tensor, read_tensor, valid_cells, write_tensor
from .nn import export_json, fit, load_model, predict, predict_samples, save_model
from .raster import (
    RasterGrid,
    align,
    read_labels,
    read_raster,
    synth_scene,
    write_labels,
    write_raster,
)
from .reference import (
    CLASS_NAMES,
    FractionMap,
    aggregate_fractions,
    confusion,
    kappa,
    read_fractions,
    reference_labels,
    write_fractions,
)

log = logging.getLogger(__name__)


class InsufficientCellsError(ValueError):
    pass


def _out(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dump(obj, path: Path) -> Path:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")
    return path


def _write_csv(rows, header, path: Path) -> Path:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def _text(text: str, path: Path) -> Path:
    path.write_text(text, encoding="utf-8")
    return path


# --- scene and samples ------------------------------------------------------------


def cmd_synth(cfg: RunConfig) -> dict:
    out = _out(cfg)
    s = cfg.scene
    pair = synth_scene(cfg.seed, s.rows, s.cols, s.factor, s.noise_sd)
    written = {
        "coarse": out / "coarse",
        "labels": out / "labels",
        "fine": out / "fine",
        "reference": out / "reference",
    }
    write_raster(pair.coarse, written["coarse"])
    write_labels(pair.fine, written["labels"])
    write_raster(pair.fine_bands, written["fine"])
    write_fractions(aggregate_fractions(pair.fine, s.factor), written["reference"], pair.coarse.cell_size_m)
    return written


def load_scene(cfg: RunConfig):
    """Aligned (coarse raster, label grid) pair and its reference fractions."""
    coarse = read_raster(cfg.path("coarse", "coarse"))
    labels = read_labels(cfg.path("labels", "labels"))
    pair = align(coarse, labels, cfg.scene.factor)
    return pair, aggregate_fractions(pair.fine, cfg.scene.factor)


def sample_cells(coarse: RasterGrid, ref, window: int, count: int, seed: int) -> np.ndarray:
    """``count`` cells drawn uniformly without replacement from the usable cells."""
    usable = valid_cells(coarse, window) & ref.valid_mask
    cells = np.argwhere(usable)
    if len(cells) < count:
        raise InsufficientCellsError(f"{len(cells)} usable cells, {count} requested")
    rng = np.random.default_rng([seed, 7])
    return cells[rng.choice(len(cells), size=count, replace=False)]


def _prep_key(cfg: RunConfig) -> dict:
    return {
        "seed": cfg.seed,
        "window": cfg.window,
        "sample_count": cfg.sample_count,
        "splits": list(cfg.train_config().splits),
    }


def prepare(cfg: RunConfig):
    """Sampled tensor, targets and train/val/test split; reuses ``prep`` output when it matches."""
    pair, ref = load_scene(cfg)
    out = Path(cfg.out)
    meta_path = out / "samples.json"
    if meta_path.exists() and (out / "tensor.hdr.json").exists():
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        if meta.get("key") == _prep_key(cfg):
            tensor = read_tensor(out / "tensor")
            split = {k: np.asarray(v, dtype=np.int64) for k, v in meta["split"].items()}
            return pair, ref, tensor, ref.samples(tensor.sample_index), split
    cells = sample_cells(pair.coarse, ref, cfg.window, cfg.sample_count, cfg.seed)
    tensor = build_tensor(pair.coarse, cfg.window, cells)
    train, val, test = kfold_split(len(cells), cfg.train_config().splits, cfg.seed)
    split = {"train": train, "val": val, "test": test}
    return pair, ref, tensor, ref.samples(cells), split


def _persist_samples(cfg: RunConfig, tensor, targets, split) -> dict:
    out = _out(cfg)
    write_tensor(tensor, out / "tensor")
    meta = {
        "key": _prep_key(cfg),
        "split": {k: v.tolist() for k, v in split.items()},
        "split_sizes": {k: len(v) for k, v in split.items()},
        "targets": targets.tolist(),
    }
    return {"tensor": out / "tensor", "samples": _dump(meta, out / "samples.json")}


def cmd_prep(cfg: RunConfig) -> dict:
    _, _, tensor, targets, split = prepare(cfg)
    return _persist_samples(cfg, tensor, targets, split)


# --- training and prediction --------------------------------------------------------


def cmd_train(cfg: RunConfig) -> dict:
    out = _out(cfg)
    _, _, tensor, targets, split = prepare(cfg)
    written = _persist_samples(cfg, tensor, targets, split)
    mcfg, tcfg = cfg.model_config(), cfg.train_config()
    tr, va, te = split["train"], split["val"], split["test"]
    log.info("training on %d samples (%d val, %d test)", len(tr), len(va), len(te))
    params, tlog = fit(mcfg, tcfg, tensor.take(tr), targets[tr], tensor.take(va), targets[va])
    model_path = cfg.path("model", "model.bin")
    save_model(params, tlog, model_path)
    export_json(params, tlog, out / "model.json")
    report = {
        "split_sizes": {k: len(v) for k, v in split.items()},
        "trainable_parameters": params.trainable_count(),
        "final_train_loss": tlog.train_loss[-1] if tlog.train_loss else None,
        "final_val_loss": tlog.val_loss[-1] if tlog.val_loss else None,
    }
    if len(te):
        metrics = compute_metrics(targets[te], predict_samples(params, tensor.take(te)))
        report["test"] = metrics.to_dict()
    written.update(model=model_path, model_json=out / "model.json", report=_dump(report, out / "train_report.json"))
    return written


def cmd_predict(cfg: RunConfig) -> dict:
    out = _out(cfg)
    params, _ = load_model(cfg.path("model", "model.bin"))
    if params.config.window != cfg.window:
        raise ValueError(f"model window {params.config.window} != requested window {cfg.window}")
    coarse = read_raster(cfg.path("coarse", "coarse"))
    usable = valid_cells(coarse, cfg.window)
    tensor = build_tensor(coarse, cfg.window, np.argwhere(usable))
    fmap = predict(params, tensor)
    written = {"prediction": out / "prediction"}
    write_fractions(fmap, written["prediction"], coarse.cell_size_m)
    labels_path = cfg.path("labels", "labels")
    if Path(str(labels_path) + ".hdr.json").exists():
        pair = align(coarse, read_labels(labels_path), cfg.scene.factor)
        ref = aggregate_fractions(pair.fine, cfg.scene.factor)
        both = ref.valid_mask & fmap.valid_mask
        for name, p, r in (("builtup", fmap.builtup, ref.builtup), ("vegetation", fmap.vegetation, ref.vegetation)):
            key = f"error_{name}"
            written[key] = out / key
            write_raster(RasterGrid((p - r)[None], coarse.cell_size_m, nodata_mask=~both), written[key])
    return written


# --- assessment -----------------------------------------------------------------------


def _assessment(ref_s, pred_s, factor, tag, out: Path, written: dict) -> dict:
    section = {}
    for k, name in enumerate(CLASSES):
        slug = name.replace("-", "")
        roc = roc_analysis(pred_s[:, k], ref_s[:, k], 0.5)
        hist = bias_histogram(ref_s[:, k], pred_s[:, k])
        boxes = boxplot_summary(ref_s[:, k], pred_s[:, k], factor)
        written[f"roc_{tag}_{slug}"] = _text(roc.curve_csv(), out / f"roc_{tag}_{slug}.csv")
        written[f"bias_{tag}_{slug}"] = _text(hist.to_csv(), out / f"bias_{tag}_{slug}.csv")
        written[f"box_{tag}_{slug}"] = _write_csv(
            [[b.label, b.count, b.min, b.q1, b.median, b.q3, b.max] for b in boxes],
            ["group", "count", "min", "q1", "median", "q3", "max"],
            out / f"boxplot_{tag}_{slug}.csv",
        )
        section[name] = {
            "roc": roc.to_dict(),
            "within_15": hist.within_15,
            "within_25": hist.within_25,
        }
    return section


def cmd_evaluate(cfg: RunConfig) -> dict:
    """Compare the predicted map with the reference fractions at 1x1 and
    block x block scale, over all cells valid in both maps, plus the held-out
    test cells when a ``prep``/``train`` split exists."""
    out = _out(cfg)
    pred = read_fractions(out / "prediction")
    _, ref = load_scene(cfg)
    # fraction rasters hold float32; compare the reference at that precision
    ref = FractionMap(ref.builtup.astype(np.float32), ref.vegetation.astype(np.float32), ref.valid_mask)
    written: dict = {}
    report: dict = {"metrics": {}}
    rows = []

    ref_s, pred_s = paired_samples(ref, pred)
    m = compute_metrics(ref_s, pred_s, scale="1x1")
    report["metrics"]["scene_1x1"] = m.to_dict()
    rows += m.csv_rows("scene")

    k = cfg.block
    ref3_s, pred3_s = paired_samples(aggregate_blocks(ref, k), aggregate_blocks(pred, k))
    m3 = compute_metrics(ref3_s, pred3_s, scale=f"{k}x{k}")
    report["metrics"][f"scene_{k}x{k}"] = m3.to_dict()
    rows += m3.csv_rows("scene")

    meta_path = out / "samples.json"
    if meta_path.exists():
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        test = read_tensor(out / "tensor").sample_index[np.asarray(meta["split"]["test"], dtype=np.int64)]
        keep = pred.valid_mask[test[:, 0], test[:, 1]]
        test = test[keep]
        if len(test):
            mt = compute_metrics(ref.samples(test), pred.samples(test), scale="1x1")
            report["metrics"]["test_1x1"] = mt.to_dict()
            rows += mt.csv_rows("test")

    f = cfg.scene.factor
    report["assessment"] = {
        "1x1": _assessment(ref_s, pred_s, f, "1x1", out, written),
        f"{k}x{k}": _assessment(ref3_s, pred3_s, f * k, f"{k}x{k}", out, written),
    }
    written["metrics_csv"] = _write_csv(rows, CSV_HEADER, out / "metrics.csv")
    written["report"] = _dump(report, out / "evaluate.json")
    return written


def _cnn_trainer(cfg: RunConfig):
    mcfg, tcfg = cfg.model_config(), cfg.train_config()

    def trainer(x, y):
        params, _ = fit(mcfg, tcfg, x, y)
        return lambda xt: predict_samples(params, xt)

    return trainer


def cmd_crossval(cfg: RunConfig) -> dict:
    out = _out(cfg)
    _, _, tensor, targets, _ = prepare(cfg)
    folds = kfold_split(len(targets), cfg.crossval_folds, cfg.seed)
    result = cross_validate(folds, _cnn_trainer(cfg), tensor, targets)
    rows = []
    for i, rep in enumerate(result.folds):
        rows += rep.csv_rows(f"held_out_fold_{i + 1}")
    doc = result.to_dict()
    doc["fold_sizes"] = [len(f) for f in folds]
    return {
        "report": _dump(doc, out / "crossval.json"),
        "csv": _write_csv(rows, CSV_HEADER, out / "crossval.csv"),
    }


def cmd_baseline(cfg: RunConfig, kind: str) -> dict:
    out = _out(cfg)
    _, _, tensor, targets, split = prepare(cfg)
    rows = bl.flatten_features(tensor)
    tr, va, te = split["train"], split["val"], split["test"]
    log.info("baseline %s: feature width %d", kind, rows.shape[1])
    written = {}
    report = {"kind": kind, "feature_width": int(rows.shape[1]), "split_sizes": {k: len(v) for k, v in split.items()}}
    if kind == "lr":
        model = bl.lr_fit(rows[tr], targets[tr], cfg.train_config(), rows[va], targets[va])
        pred = bl.lr_predict(model, rows[te])
        written["model"] = out / "lr_model.bin"
        save_model(model.params, model.log, written["model"])
    elif kind == "rf":
        rf = cfg.rf
        forest = bl.rf_fit(rows[tr], targets[tr], rf.n_trees, rf.max_features, rf.min_leaf, cfg.seed)
        pred = bl.rf_predict(forest, rows[te])
        written["model"] = out / "forest.bin"
        bl.save_forest(forest, written["model"])
        bl.write_summary(forest, out / "forest.json")
        written["summary"] = out / "forest.json"
        report["oob_score"] = forest.oob_score if forest.oob_defined else None
    else:
        raise ValueError(f"unknown baseline {kind!r}")
    if len(te):
        report["test"] = compute_metrics(targets[te], pred).to_dict()
    written["report"] = _dump(report, out / f"baseline_{kind}.json")
    return written


def cmd_assess_reference(cfg: RunConfig) -> dict:
    """Build the ISODATA + NDVI reference map from the fine image and score it
    against ground-truth labels at randomly sampled fine cells."""
    out = _out(cfg)
    rc = cfg.reference
    fine = read_raster(cfg.path("fine", "fine"))
    labels = reference_labels(
        fine, rc.k_init, rc.max_iter, rc.split_sd, rc.merge_dist, cfg.seed, rc.ndvi_veg_threshold, rc.rules
    )
    truth = read_labels(cfg.path("truth", "labels"))
    if (truth.rows, truth.cols) != (labels.rows, labels.cols):
        raise ValueError("truth labels and fine image differ in shape")
    written = {"reference_labels": out / "reference_labels"}
    write_labels(labels, written["reference_labels"])
    f = cfg.scene.factor
    if labels.rows % f == 0 and labels.cols % f == 0:
        written["reference_fractions"] = out / "reference_fractions"
        write_fractions(aggregate_fractions(labels, f), written["reference_fractions"])

    usable = np.flatnonzero((labels.labels.ravel() != 255) & (truth.labels.ravel() != 255))
    rng = np.random.default_rng([cfg.seed, 400])
    pick = rng.choice(usable, size=min(rc.n_samples, len(usable)), replace=False)
    codes = tuple(sorted(CLASS_NAMES))
    m = confusion(labels.labels.ravel()[pick], truth.labels.ravel()[pick], labels=codes)
    report = {
        "n_samples": int(len(pick)),
        "class_names": [CLASS_NAMES[c] for c in codes],
        "confusion": m.to_dict(),
        "kappa": kappa(m),
    }
    written["confusion_csv"] = _text(m.to_csv(), out / "confusion.csv")
    written["report"] = _dump(report, out / "assess_reference.json")
    return written
