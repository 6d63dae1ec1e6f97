"""Command-line entry point: ``subpixel <command> [flags]``.

Settings come from defaults, then ``--config``, then flags. Every command
writes into ``--out`` and prints the artifacts it wrote as JSON.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import sys

from threadpoolctl import threadpool_limits

from . import pipeline
from .config import load_config

log = logging.getLogger("subpixel")


def _add_common(p: argparse.ArgumentParser, top: bool) -> None:
    # on subparsers the defaults are suppressed so a flag given before the
    # command is not clobbered by the subparser's default
    d = None if top else argparse.SUPPRESS
    p.add_argument("--config", default=d, help="JSON config file")
    p.add_argument("--seed", type=int, default=d, help="master seed")
    p.add_argument(
        "--deterministic",
        action="store_true",
        default=False if top else argparse.SUPPRESS,
        help="single-threaded BLAS for bit-identical artifacts",
    )
    p.add_argument("--out", default=d, help="output directory")
    p.add_argument("-v", "--verbose", action="store_true", default=False if top else argparse.SUPPRESS)


def _add_scene(p):
    p.add_argument("--rows", type=int, help="coarse rows")
    p.add_argument("--cols", type=int, help="coarse columns")
    p.add_argument("--factor", type=int, help="fine cells per coarse cell side")
    p.add_argument("--noise-sd", type=float, help="additive Gaussian noise on coarse bands")


def _add_paths(p, *keys):
    for key in keys:
        p.add_argument(f"--{key}", help=f"{key} path (default: inside --out)")


def _add_sampling(p):
    p.add_argument("--window", type=int, help="neighborhood size (odd)")
    p.add_argument("--sample-count", type=int, help="cells sampled for training")


def _add_training(p):
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float, help="Adam learning rate")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="subpixel", description=__doc__.splitlines()[0])
    _add_common(parser, top=True)
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, help_text):
        p = sub.add_parser(name, help=help_text)
        _add_common(p, top=False)
        return p

    p = command("synth", "write a synthetic coarse/fine scene")
    _add_scene(p)

    for name, text in (("prep", "sample cells and cache the input tensor"), ("train", "train the CNN")):
        p = command(name, text)
        _add_sampling(p)
        _add_paths(p, "coarse", "labels")
        p.add_argument("--factor", type=int)
        if name == "train":
            _add_training(p)
            _add_paths(p, "model")

    p = command("predict", "predict fraction maps with a trained model")
    p.add_argument("--window", type=int)
    p.add_argument("--factor", type=int)
    _add_paths(p, "coarse", "labels", "model")

    p = command("evaluate", "accuracy assessment of the predicted map")
    p.add_argument("--factor", type=int)
    p.add_argument("--block", type=int, help="block size for the aggregated scale")
    _add_paths(p, "coarse", "labels")

    p = command("crossval", "k-fold cross-validation of the CNN")
    _add_sampling(p)
    _add_training(p)
    p.add_argument("--factor", type=int)
    p.add_argument("--folds", type=float, nargs="+", help="fold fractions")
    _add_paths(p, "coarse", "labels")

    p = command("baseline", "linear-regression or random-forest baseline")
    p.add_argument("kind", choices=["lr", "rf"])
    _add_sampling(p)
    _add_training(p)
    p.add_argument("--factor", type=int)
    p.add_argument("--n-trees", type=int)
    p.add_argument("--min-leaf", type=int)
    _add_paths(p, "coarse", "labels")

    p = command("assess-reference", "score the clustered reference map against truth labels")
    p.add_argument("--n-samples", type=int, help="random fine cells to compare")
    p.add_argument("--factor", type=int)
    _add_paths(p, "fine", "truth")
    return parser


def overrides_from_args(args) -> dict:
    """Nested config overrides from the flags that were given."""
    a = vars(args)

    def given(*keys):
        return {k.replace("-", "_"): a[k] for k in keys if a.get(k) is not None}

    over = given("seed", "out", "window", "sample_count", "block")
    if a.get("deterministic"):
        over["deterministic"] = True
    if a.get("folds") is not None:
        over["crossval_folds"] = tuple(a["folds"])
    scene = given("rows", "cols", "factor", "noise_sd")
    if scene:
        over["scene"] = scene
    train = given("epochs", "batch_size", "lr")
    if train:
        over["train"] = train
    rf = given("n_trees", "min_leaf")
    if rf:
        over["rf"] = rf
    ref = given("n_samples")
    if ref:
        over["reference"] = ref
    paths = given("coarse", "labels", "fine", "truth", "model")
    if paths:
        over["paths"] = paths
    return over


COMMANDS = {
    "synth": pipeline.cmd_synth,
    "prep": pipeline.cmd_prep,
    "train": pipeline.cmd_train,
    "predict": pipeline.cmd_predict,
    "evaluate": pipeline.cmd_evaluate,
    "crossval": pipeline.cmd_crossval,
    "assess-reference": pipeline.cmd_assess_reference,
}


def run(args) -> dict:
    cfg = load_config(args.config, overrides_from_args(args))
    limit = threadpool_limits(limits=1) if cfg.deterministic else contextlib.nullcontext()
    with limit:
        if args.command == "baseline":
            return pipeline.cmd_baseline(cfg, args.kind)
        return COMMANDS[args.command](cfg)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        written = run(args)
    except (OSError, ValueError, RuntimeError, KeyError, IndexError) as exc:
        print(f"subpixel {args.command}: error: {exc}", file=sys.stderr)
        return 1
    print(json.dumps({k: str(v) for k, v in written.items()}, indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
