"""Command-line entry point: `dermapipe-export features|backend|synthetic`."""

from __future__ import annotations

import argparse
import logging
import sys

from . import __version__
from .backend import run_backend_job
from .errors import ExportError
from .export import DEFAULT_BATCH, export_features
from .synthetic import make_synthetic
from .vit import POOLINGS

EXIT_OK = 0
EXIT_ERROR = 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dermapipe-export",
        description="Run the frozen backbones offline and write pipeline "
                    "interchange files.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    features = sub.add_parser(
        "features", help="embed manifest images into a DDXF feature file")
    features.add_argument("--manifest", required=True)
    features.add_argument("--out", required=True)
    features.add_argument("--masked", action="store_true",
                          help="mask each image with its annotation before "
                               "embedding (masked arm)")
    features.add_argument("--checkpoint", default="tiny768",
                          help="backbone weights: a preset name or a path to "
                               "a ViT-B/16 state dict (default: tiny768 "
                               "stand-in)")
    features.add_argument("--pooling", choices=POOLINGS, default="cls")
    features.add_argument("--batch-size", type=int, default=DEFAULT_BATCH)
    features.add_argument("--seed", type=int, default=0,
                          help="init seed for preset stand-in weights")
    features.add_argument("--selftest", metavar="DIR", default=None,
                          help="run the preprocessing self-test against this "
                               "vector-test fixture before exporting")

    backend = sub.add_parser(
        "backend", help="serve one segmentation job file (the pipeline's "
                        "external-backend protocol)")
    backend.add_argument("job", help="path to the job.json written by the "
                                     "pipeline")

    synthetic = sub.add_parser(
        "synthetic", help="generate a synthetic oracle dataset")
    synthetic.add_argument("--out", required=True, help="output directory")
    synthetic.add_argument("--seed", type=int, default=0)
    synthetic.add_argument("--n", type=int, default=200)
    synthetic.add_argument("--dim", type=int, default=768)
    synthetic.add_argument("--classes", type=int, default=4)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.command == "features":
            out = export_features(
                args.manifest, args.out, masked=args.masked,
                checkpoint=args.checkpoint, pooling=args.pooling,
                batch_size=args.batch_size, seed=args.seed,
                selftest_dir=args.selftest)
            print(f"wrote {out}")
        elif args.command == "backend":
            run_backend_job(args.job)
        else:
            paths = make_synthetic(args.out, seed=args.seed, n=args.n,
                                   dim=args.dim, classes=args.classes)
            print(f"wrote {paths['manifest']}")
    except ExportError as exc:
        print(f"dermapipe-export: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
