"""Command-line interface.

Subcommands: train, eval, predict, gridsearch, gradcheck, split, report.
Exit codes: 0 success, 1 runtime/data error, 2 usage error. Machine-readable
results (JSON/CSV) go to stdout or files; progress prose goes to stderr and
is silenced by --quiet.
"""

import argparse
import csv
import io
import json
import sys

import numpy as np

from . import backend, data, fusion, training
from .errors import FuselabError

GRADCHECK_THRESHOLD = 1e-4

_METRIC_FLAGS = {"macro-f1": "macro_f1", "weighted-f1": "weighted_f1", "accuracy": "accuracy"}
_STYLE_METRICS = {"memotion": "macro_f1", "mvsa": "weighted_f1"}
_LOSS_FLAGS = {"focal": "focal", "ce": "cross_entropy"}


def _say(args, message: str) -> None:
    if not args.quiet:
        print(message, file=sys.stderr)


def _selection_metric(args) -> str:
    if args.metric:
        return _METRIC_FLAGS[args.metric]
    if args.dataset_style:
        return _STYLE_METRICS[args.dataset_style]
    return "macro_f1"


def _train_config(args) -> training.TrainConfig:
    return training.TrainConfig(
        learning_rate=args.lr,
        focal_gamma=args.gamma,
        dropout_rate=args.dropout,
        loss_kind=_LOSS_FLAGS[args.loss],
        batch_size=args.batch,
        max_epochs=args.epochs,
        patience=args.patience,
        seed=args.seed,
        selection_metric=_selection_metric(args),
    )


def _write(path: str, content: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(content)


def _stem(path: str) -> str:
    return path[:path.rindex(".")] if "." in path.rsplit("/", 1)[-1] else path


def cmd_train(args) -> int:
    train_set = data.load_embeddings(args.train)
    val_set = data.load_embeddings(args.val)
    config = _train_config(args)
    model = fusion.init_params(args.model, config.seed)
    _say(args, f"training {args.model} on {len(train_set)} samples "
               f"(val {len(val_set)}, backend {backend.NAME})")
    model, history = training.train(model, train_set, val_set, config)
    fusion.save_model(model, args.out)
    history_path = _stem(args.out) + ".history.csv"
    metrics_path = _stem(args.out) + ".metrics.json"
    _write(history_path, history.to_csv())
    best = history.epochs[history.best_epoch - 1].val_report
    _write(metrics_path, best.to_json() + "\n")
    summary = {
        "model": args.model,
        "seed": config.seed,
        "backend": backend.NAME,
        "config": json.loads(config.to_json()),
        "epochs_run": len(history.epochs),
        "best_epoch": history.best_epoch,
        "best_" + config.selection_metric: best.value(config.selection_metric),
        "model_file": args.out,
        "history_file": history_path,
        "metrics_file": metrics_path,
    }
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def cmd_eval(args) -> int:
    model = fusion.load_model(args.model_file)
    dataset = data.load_embeddings(args.embeddings)
    xt, xv, y = dataset.to_arrays()
    report = training.evaluate_model(model, xt, xv, y)
    print(report.to_json())
    return 0


def cmd_predict(args) -> int:
    model = fusion.load_model(args.model_file)
    dataset = data.load_embeddings(args.embeddings)
    xt, xv, _ = dataset.to_arrays()
    probs = fusion.predict_batch(model, xt, xv)
    classes = np.argmax(probs, axis=1)
    for rec, p, c in zip(dataset.records, probs, classes):
        line = {"id": rec.id, "probs": [float(x) for x in p],
                "class": int(c), "label": data.LABEL_NAMES[int(c)]}
        print(json.dumps(line, sort_keys=True))
    return 0


def cmd_gridsearch(args) -> int:
    train_set = data.load_embeddings(args.train)
    val_set = data.load_embeddings(args.val)
    # lr/gamma/dropout placeholders; every grid cell overrides them
    base = training.TrainConfig(
        loss_kind=_LOSS_FLAGS[args.loss], batch_size=args.batch,
        max_epochs=args.epochs, patience=args.patience, seed=args.seed,
        selection_metric=_selection_metric(args))
    grid = training.ParamGrid(
        kinds=tuple(args.model) if args.model else fusion.FusionKind.ALL,
        learning_rates=tuple(args.lr) if args.lr else training.LEARNING_RATE_GRID,
        dropout_rates=tuple(args.dropout) if args.dropout else training.DROPOUT_GRID,
        gammas=tuple(args.gamma) if args.gamma else training.GAMMA_GRID,
    )
    _say(args, f"grid search over {len(grid.cells())} cells")
    result = training.grid_search(train_set, val_set, base, grid)
    _write(args.out_table, result.to_csv())
    if result.best is None:
        _say(args, "every grid cell failed")
        return 1
    best = {
        "kind": result.best.kind,
        "config": json.loads(training.TrainConfig(
            learning_rate=result.best.learning_rate,
            focal_gamma=result.best.focal_gamma,
            dropout_rate=result.best.dropout_rate,
            loss_kind=base.loss_kind, batch_size=base.batch_size,
            max_epochs=base.max_epochs, patience=base.patience,
            seed=base.seed, selection_metric=base.selection_metric).to_json()),
        "metric": result.selection_metric,
        "value": result.best.metric,
        "best_epoch": result.best.best_epoch,
        "cells": len(result.cells),
        "table_file": args.out_table,
        "seed": base.seed,
        "backend": backend.NAME,
    }
    payload = json.dumps(best, indent=2, sort_keys=True)
    if args.out_best:
        _write(args.out_best, payload + "\n")
    print(payload)
    return 0


def cmd_gradcheck(args) -> int:
    kinds = fusion.FusionKind.ALL if args.model == "all" else (args.model,)
    worst = 0.0
    blocks = {}
    ok = True
    for kind in kinds:
        errors = fusion.model_grad_check(kind, eps=args.eps, seed=args.seed)
        blocks[kind] = errors
        for name, err in errors.items():
            _say(args, f"{kind:10s} {name:12s} max rel err {err:.3e}")
            worst = max(worst, err)
            if err >= GRADCHECK_THRESHOLD:
                ok = False
                _say(args, f"FAIL: {kind}/{name} >= {GRADCHECK_THRESHOLD:g}")
    print(json.dumps({"eps": args.eps, "seed": args.seed, "backend": backend.NAME,
                      "threshold": GRADCHECK_THRESHOLD, "blocks": blocks,
                      "max_error": worst, "pass": ok}, indent=2, sort_keys=True))
    return 0 if ok else 1


def cmd_split(args) -> int:
    fractions = args.fractions
    dataset = data.load_embeddings(args.embeddings)
    spec = data.SplitSpec(train=fractions[0], val=fractions[1], test=fractions[2],
                          seed=args.seed)
    parts = data.stratified_split(dataset, spec)
    paths = [f"{args.out_prefix}.{name}.mmeb" for name in ("train", "val", "test")]
    for part, path in zip(parts, paths):
        data.save_embeddings(part, path)
        _say(args, f"wrote {len(part)} records to {path}")
    print(json.dumps({"train": paths[0], "val": paths[1], "test": paths[2],
                      "sizes": [len(p) for p in parts], "seed": args.seed},
                     indent=2, sort_keys=True))
    return 0


def cmd_report(args) -> int:
    with open(args.history, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise FuselabError(f"{args.history}: no epochs in history")
    needed = ("epoch", "f1_negative", "f1_neutral", "f1_positive")
    missing = [c for c in needed if c not in rows[0]]
    if missing:
        raise FuselabError(f"{args.history}: missing columns {missing}")
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(needed)
    for row in rows:
        writer.writerow([row[c] for c in needed])
    if args.out:
        _write(args.out, out.getvalue())
        _say(args, f"wrote {len(rows)}-epoch breakdown to {args.out}")
    else:
        sys.stdout.write(out.getvalue())
    return 0


def _fractions(text: str):
    try:
        parts = [float(x) for x in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"fractions must be numbers, got {text!r}")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected three fractions: train,val,test")
    if any(f <= 0 for f in parts) or abs(sum(parts) - 1.0) > 1e-9:
        raise argparse.ArgumentTypeError(f"fractions must be positive and sum to 1, got {text!r}")
    return parts


def _add_common_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--train", required=True, help="training embeddings (.mmeb)")
    p.add_argument("--val", required=True, help="validation embeddings (.mmeb)")
    p.add_argument("--loss", choices=sorted(_LOSS_FLAGS), default="focal")
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--patience", type=int, default=5)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--metric", choices=sorted(_METRIC_FLAGS), default=None,
                   help="selection metric (default by --dataset-style, else macro-f1)")
    p.add_argument("--dataset-style", choices=sorted(_STYLE_METRICS), default=None,
                   help="memotion selects macro-f1, mvsa selects weighted-f1")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fuselab",
        description="Train and evaluate text+image fusion sentiment classifiers "
                    "over precomputed embeddings.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--quiet", action="store_true", help="suppress progress output")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_parser(name, **kwargs):
        return sub.add_parser(name, parents=[common], **kwargs)

    p = add_parser("train", help="train one fusion model")
    p.add_argument("--model", choices=fusion.FusionKind.ALL, required=True)
    _add_common_train_flags(p)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--gamma", type=float, default=2.0)
    p.add_argument("--dropout", type=float, default=0.0)
    p.add_argument("--out", required=True, help="model output path (.fmdl)")
    p.set_defaults(func=cmd_train)

    p = add_parser("eval", help="evaluate a saved model on an embedding file")
    p.add_argument("--model-file", required=True)
    p.add_argument("--embeddings", required=True)
    p.set_defaults(func=cmd_eval)

    p = add_parser("predict", help="per-record probabilities as JSON lines")
    p.add_argument("--model-file", required=True)
    p.add_argument("--embeddings", required=True)
    p.set_defaults(func=cmd_predict)

    p = add_parser("gridsearch", help="sweep the hyperparameter grid")
    p.add_argument("--model", action="append", choices=fusion.FusionKind.ALL,
                   help="restrict to a fusion kind (repeatable; default all three)")
    _add_common_train_flags(p)
    p.add_argument("--lr", action="append", type=float,
                   help="restrict learning rates (repeatable; default full grid)")
    p.add_argument("--gamma", action="append", type=float,
                   help="restrict focal gammas (repeatable; default full grid)")
    p.add_argument("--dropout", action="append", type=float,
                   help="restrict dropout rates (repeatable; default full grid)")
    p.add_argument("--out-table", required=True, help="per-cell results CSV")
    p.add_argument("--out-best", default=None, help="best-config JSON (also printed)")
    p.set_defaults(func=cmd_gridsearch)

    p = add_parser("gradcheck", help="finite-difference check of every backward pass")
    p.add_argument("--model", choices=fusion.FusionKind.ALL + ("all",), default="all")
    p.add_argument("--eps", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=42)
    p.set_defaults(func=cmd_gradcheck)

    p = add_parser("split", help="stratified train/val/test split of an embedding file")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--fractions", type=_fractions, default=[0.8, 0.1, 0.1],
                   help="train,val,test fractions summing to 1 (default 0.8,0.1,0.1)")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=cmd_split)

    p = add_parser("report", help="per-class F1 breakdown from a history CSV")
    p.add_argument("--history", required=True)
    p.add_argument("--out", default=None, help="output CSV (stdout if omitted)")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FuselabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
