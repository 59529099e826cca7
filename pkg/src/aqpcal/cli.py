"""Command-line entry point.

Subcommands cover the whole pipeline: generate, histogram, build-table,
train, predict-accuracy, estimate-ratio, evaluate, experiment.  Numbers
printed to stdout use full round-trip precision so output can be chained
into other commands.  Exit codes: 0 success, 1 usage error, 2 data or model
error; diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import datagen, pipeline, rng
from .geometry import load_points, save_points
from .histogram import build_histogram, load_histogram, save_histogram
from .predictor import (
    LRParams,
    Mode,
    Model,
    accuracy_features,
    build_network,
    load_any,
    lr_predict,
    predict,
    ratio_features,
    save_model,
    train,
)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _progress(msg: str) -> None:
    print(msg, file=sys.stderr)


def _cmd_generate(args) -> int:
    spec = datagen.parse_spec(args.spec)
    points = datagen.generate(spec, args.n, args.seed)
    save_points(args.out, points)
    datagen.save_metadata(str(args.out) + ".meta", spec, args.n, args.seed)
    return 0


def _cmd_histogram(args) -> int:
    points = load_points(args.points)
    save_histogram(args.out, build_histogram(points, args.h))
    return 0


def _hists_dir_for(table_path: str | Path) -> Path:
    p = Path(table_path)
    return p.parent / (p.stem + "_hists")


def _cmd_build_table(args) -> int:
    cfg = pipeline.load_config(args.config)
    datasets, hists, table = pipeline.build_corpus(cfg, _progress)
    hists_dir = _hists_dir_for(args.out)
    hists_dir.mkdir(parents=True, exist_ok=True)
    for ds_id, grid in hists.items():
        save_histogram(hists_dir / f"{ds_id}.hist", grid)
    pipeline.write_table_csv(args.out, table, cfg.hash())
    _progress(f"wrote {args.out} ({len(table.rows)} rows) and {hists_dir}/")
    return 0


def _load_hists(hists_dir) -> dict:
    hists = {}
    for path in sorted(Path(hists_dir).glob("*.hist")):
        hists[path.stem] = load_histogram(path)
    if not hists:
        raise ValueError(f"no .hist files found in {hists_dir}")
    return hists


def _cmd_train(args) -> int:
    table = pipeline.read_table_csv(args.table)
    hists = _load_hists(args.hists)
    hs = {g.h for g in hists.values()}
    if len(hs) != 1:
        raise ValueError(f"histogram directory mixes resolutions: {sorted(hs)}")
    hyper = pipeline.load_config(args.config).train if args.config else None
    model = build_network(Mode(args.mode), hs.pop(), args.seed)
    history = train(model, table.rows, hists, hyper, seed=rng.derive(args.seed, 1))
    save_model(args.out_model, model)
    best = min(history, key=lambda e: e.val_mape)
    print(f"final_train_mape={history[-1].train_mape!r}")
    print(f"best_val_mape={best.val_mape!r}")
    return 0


def _predict_one(model, features, hist) -> float:
    if isinstance(model, LRParams):
        return lr_predict(model, features)
    return predict(model, features, hist)


def _cmd_predict_accuracy(args) -> int:
    model = load_any(args.model)
    if model.mode != Mode.ACCURACY:
        raise ValueError("model is not an accuracy-prediction model")
    hist = load_histogram(args.hist)
    print(repr(_predict_one(model, accuracy_features(args.q, args.sigma), hist)))
    return 0


def _cmd_estimate_ratio(args) -> int:
    model = load_any(args.model)
    if model.mode != Mode.RATIO:
        raise ValueError("model is not a ratio-estimation model")
    hist = load_histogram(args.hist)
    print(repr(_predict_one(model, ratio_features(args.q, args.alpha), hist)))
    return 0


def _cmd_evaluate(args) -> int:
    model = load_any(args.model)
    table = pipeline.read_table_csv(args.table)
    hists = _load_hists(args.hists) if args.hists else None
    if isinstance(model, Model) and hists is None:
        raise ValueError("--hists is required for a network model")
    print(repr(pipeline.evaluate_mape(model, table, hists)))
    return 0


def _cmd_experiment(args) -> int:
    cfg = pipeline.load_config(args.config)
    if args.which == "relationship":
        path = pipeline.experiment_relationship(cfg, args.out_dir, _progress)
        _progress(f"wrote {path}")
    elif args.which == "distribution-count":
        path = pipeline.experiment_distribution_count(cfg, args.out_dir, progress=_progress)
        _progress(f"wrote {path}")
    else:
        paths = pipeline.experiment_histogram_resolution(cfg, args.out_dir, progress=_progress)
        _progress(f"wrote {paths[0]} and {paths[1]}")
    return 0


def _build_parser() -> _Parser:
    parser = _Parser(prog="aqpcal", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", help="write a synthetic point file + metadata sidecar")
    p.add_argument("--spec", required=True, help="distribution spec, e.g. gaussian:sigma=0.1")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("histogram", help="bin a point file into an h x h grid file")
    p.add_argument("--points", required=True)
    p.add_argument("--h", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_histogram)

    p = sub.add_parser("build-table", help="measure the configured corpus into a training table")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="table CSV path; histograms land in <out>_hists/")
    p.set_defaults(func=_cmd_build_table)

    p = sub.add_parser("train", help="train a dual-branch model on a table")
    p.add_argument("--mode", choices=("accuracy", "ratio"), required=True)
    p.add_argument("--table", required=True)
    p.add_argument("--hists", required=True, help="directory of .hist files")
    p.add_argument("--out-model", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="optional config supplying [train] hyperparameters")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("predict-accuracy", help="predict accuracy for (q, sigma, histogram)")
    p.add_argument("--model", required=True)
    p.add_argument("--q", type=float, required=True)
    p.add_argument("--sigma", type=float, required=True)
    p.add_argument("--hist", required=True)
    p.set_defaults(func=_cmd_predict_accuracy)

    p = sub.add_parser("estimate-ratio", help="recommend a sampling ratio for (q, alpha, histogram)")
    p.add_argument("--model", required=True)
    p.add_argument("--q", type=float, required=True)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--hist", required=True)
    p.set_defaults(func=_cmd_estimate_ratio)

    p = sub.add_parser("evaluate", help="print test MAPE of a model on a table")
    p.add_argument("--model", required=True)
    p.add_argument("--table", required=True)
    p.add_argument("--hists")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("experiment", help="run an experiment and write its CSV artifacts")
    p.add_argument(
        "which",
        choices=("relationship", "distribution-count", "histogram-resolution"),
    )
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_experiment)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except (ValueError, KeyError, OSError) as exc:
        print(f"aqpcal: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
