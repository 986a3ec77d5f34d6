"""Command-line entry point.

Exit codes: 0 success, 2 configuration errors (bad flags, bad config file),
3 data errors (missing/corrupt inputs), 4 backend errors. Log verbosity is
controlled by the DERMAPIPE_LOG environment variable (error|warn|info|debug).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .dataset import load_manifest, load_splits, make_splits, save_splits
from .errors import (
    BackendFailure,
    BackendTimeout,
    ConfigError,
    DermapipeError,
    MalformedBackendOutput,
)
from .experiment import (
    ExperimentConfig,
    render_report,
    run_ablation,
    run_cv,
    run_fraction_sweep,
)
from .featurestore import read_feature_file
from .metrics import evaluate, write_report_json
from .mlphead import (
    TrainConfig,
    load_params,
    predict_batch,
    save_params,
    train,
    write_training_log,
)
from .segmentation import DEFAULT_TIMEOUT, make_backend, run_segmentation_batch

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_BACKEND = 4

_LOG_LEVELS = {
    "error": logging.ERROR,
    "warn": logging.WARNING,
    "warning": logging.WARNING,
    "info": logging.INFO,
    "debug": logging.DEBUG,
}


def _setup_logging() -> None:
    raw = os.environ.get("DERMAPIPE_LOG", "warn").strip().lower()
    level = _LOG_LEVELS.get(raw)
    if level is None:
        level = logging.WARNING
        print(f"dermapipe: ignoring DERMAPIPE_LOG={raw!r} "
              f"(want one of {sorted(set(_LOG_LEVELS))})", file=sys.stderr)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _pick_split(path: str, index: int):
    splits = load_splits(path)
    for split in splits:
        if split.split_index == index:
            return split
    raise ConfigError(f"{path} has no split with index {index} "
                      f"(found {[s.split_index for s in splits]})")


def _cmd_split(args: argparse.Namespace) -> int:
    manifest = load_manifest(args.manifest)
    splits = make_splits(manifest, args.n_splits, args.ratio, args.seed,
                         stratify=args.stratify)
    save_splits(splits, args.out)
    print(f"wrote {len(splits)} splits to {args.out}")
    return EXIT_OK


def _cmd_segment(args: argparse.Namespace) -> int:
    manifest = load_manifest(args.manifest)
    store = read_feature_file(args.features)
    backend = make_backend(args.backend, timeout=args.timeout, manifest=manifest)
    pool_ids = None
    if args.splits is not None:
        split = _pick_split(args.splits, args.split_index)
        with_mask = {r.id for r in manifest if r.mask_path}
        pool_ids = [rid for rid in split.train_ids if rid in with_mask]
    result = run_segmentation_batch(manifest, store, backend, args.k,
                                    args.out_dir, pool_ids=pool_ids,
                                    jobs=args.jobs, force=args.force)
    print(f"masks: {len(result.masks)} ok, {len(result.failures)} failed, "
          f"{result.invoked} backend calls -> {result.out_dir}")
    if result.failures:
        for rid, reason in sorted(result.failures.items()):
            log.warning("failed %s: %s", rid, reason)
        if not result.masks:
            print("dermapipe: backend error: every record failed", file=sys.stderr)
            return EXIT_BACKEND
    return EXIT_OK


def _train_config(args: argparse.Namespace) -> TrainConfig:
    cfg = TrainConfig()
    overrides = {}
    for name in ("epochs", "batch_size", "weight_decay", "seed"):
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    if getattr(args, "lr", None) is not None:
        overrides["learning_rate"] = args.lr
    if getattr(args, "dropout", None) is not None:
        overrides["dropout_p"] = args.dropout
    try:
        return replace(cfg, **overrides)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _cmd_train(args: argparse.Namespace) -> int:
    manifest = load_manifest(args.manifest)
    store = read_feature_file(args.features)
    split = _pick_split(args.splits, args.split_index)
    config = _train_config(args)
    params, epoch_log = train(store, split, manifest.labels(), config)
    save_params(params, args.out)
    if args.log:
        write_training_log(epoch_log, args.log)
    final = epoch_log[-1].val_weighted_f1 if epoch_log else float("nan")
    print(f"model written to {args.out} (final val weighted F1: {final:.4f})")
    return EXIT_OK


def _cmd_eval(args: argparse.Namespace) -> int:
    manifest = load_manifest(args.manifest)
    store = read_feature_file(args.features)
    split = _pick_split(args.splits, args.split_index)
    params = load_params(args.model)
    labels = manifest.labels()
    val_ids = list(split.val_ids)
    preds = predict_batch(params, store.matrix(val_ids).astype(float))
    report = evaluate([labels[rid] for rid in val_ids], preds.tolist())
    if args.out:
        write_report_json(report, args.out)
    print(f"weighted F1: {report.weighted_f1:.4f} ({report.n_samples} samples)")
    return EXIT_OK


def _cmd_experiment(args: argparse.Namespace) -> int:
    config = ExperimentConfig.from_file(args.config)
    if args.seed is not None:
        config.seed = args.seed
    if args.k is not None:
        config.k = args.k
    if args.out is not None:
        config.out_dir = args.out
    train_overrides = {}
    if args.epochs is not None:
        train_overrides["epochs"] = args.epochs
    if args.lr is not None:
        train_overrides["learning_rate"] = args.lr
    if train_overrides:
        config.train = replace(config.train, **train_overrides)

    runner = {"cv": run_cv, "ablation": run_ablation, "sweep": run_fraction_sweep}
    report = runner[args.mode](config)
    if args.mode == "cv":
        agg = report["aggregate"]
        print(f"cv weighted F1: {agg['mean']:.4f} ± {agg['std']:.4f}")
    elif args.mode == "ablation":
        for arm in ("masked", "whole_image"):
            agg = report["arms"][arm]["aggregate"]
            print(f"{arm} weighted F1: {agg['mean']:.4f} ± {agg['std']:.4f}")
    else:
        for row in report["per_fraction"]:
            print(f"fraction {row['fraction']:.2f}: "
                  f"{row['mean']:.4f} ± {row['std']:.4f}")
    print(f"report: {Path(config.out_dir) / 'report.json'}")
    return EXIT_OK


def _cmd_report(args: argparse.Namespace) -> int:
    written = render_report(args.dir)
    for path in written:
        print(f"wrote {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dermapipe",
        description="Severity grading pipeline: retrieval-prompted lesion "
                    "masks plus an MLP head over frozen embeddings.")
    parser.add_argument("--version", action="version", version=f"dermapipe {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("split", help="generate cross-validation splits")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n-splits", type=int, default=5)
    p.add_argument("--ratio", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--stratify", action="store_true")
    p.set_defaults(func=_cmd_split)

    p = sub.add_parser("segment", help="predict lesion masks for a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--features", required=True,
                   help="whole-image feature file used for prompt retrieval")
    p.add_argument("--backend", required=True,
                   help="'trivial', 'oracle', or a shell command")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--timeout", type=float, default=DEFAULT_TIMEOUT)
    p.add_argument("--force", action="store_true")
    p.add_argument("--splits", default=None,
                   help="optional split file to restrict the prompt pool")
    p.add_argument("--split-index", type=int, default=0)
    p.set_defaults(func=_cmd_segment)

    p = sub.add_parser("train", help="train the severity head on one split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--splits", required=True)
    p.add_argument("--split-index", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--log", default=None, help="optional per-epoch CSV")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--dropout", type=float, default=None)
    p.add_argument("--weight-decay", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a trained model on a split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--splits", required=True)
    p.add_argument("--split-index", type=int, default=0)
    p.add_argument("--model", required=True)
    p.add_argument("--out", default=None, help="optional metrics JSON")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("experiment", help="run a full experiment from a config")
    p.add_argument("mode", choices=["cv", "ablation", "sweep"])
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_experiment)

    p = sub.add_parser("report", help="render summary.md (and sweep.csv)")
    p.add_argument("--dir", required=True)
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        log.error("%s", exc)
        print(f"dermapipe: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (BackendFailure, BackendTimeout, MalformedBackendOutput) as exc:
        log.error("%s", exc)
        print(f"dermapipe: backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except DermapipeError as exc:
        log.error("%s", exc)
        print(f"dermapipe: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
