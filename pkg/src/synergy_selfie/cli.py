"""Command-line entry point: ``synergy-selfie <command> [options]``.

Exit codes: 0 success, 2 configuration or input error, 3 a required upstream
artifact is missing, 4 training diverged.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import load_config
from .dataset import corner_rects, load_manifest, with_rects
from .errors import ConfigError, DecodeError, DivergedError, MissingArtifactError
from .pipeline import Pipeline
from .synthetic import generate_synthetic_dataset

EXIT_OK, EXIT_CONFIG, EXIT_MISSING, EXIT_DIVERGED = 0, 2, 3, 4

STAGE_COMMANDS = {  # command -> stage
    "split": "split",
    "features": "features",
    "fit-cca": "cca",
    "train-net": "train",
    "descriptors": "descriptors",
    "train-svm": "svm",
    "eval": "eval",
    "baseline": "baseline",
}


def _quiet(p):
    p.add_argument("-q", "--quiet", action="store_true", help="only print results")


def _common(p):
    _quiet(p)
    p.add_argument("--config", type=Path, help="flat 'section.key = value' config file")
    p.add_argument("--store", type=Path, default=Path("store"), help="artifact store root")
    p.add_argument("--seed", type=int, help="master seed (overrides config)")
    p.add_argument("--manifest", type=Path, required=True, help="tab-separated image manifest")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="synergy-selfie", description="Synergy-constrained CNN pipeline for selfie classification.")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-synthetic", help="render the synthetic head-and-arm dataset")
    g.add_argument("--out", type=Path, required=True)
    g.add_argument("--n-per-class", type=int, default=400)
    g.add_argument("--size", type=int, default=227)
    g.add_argument("--seed", type=int, default=0)
    _quiet(g)

    for name, stage in STAGE_COMMANDS.items():
        _common(sub.add_parser(name, help=f"run the {stage} stage"))
    _common(sub.add_parser("run-all", help="run every stage, reusing cached artifacts"))

    a = sub.add_parser("ablate", help="re-evaluate test images with masked regions")
    _common(a)
    src = a.add_mutually_exclusive_group(required=True)
    src.add_argument("--mask-manifest", type=Path, help="manifest whose third column holds rects")
    src.add_argument("--corners", action="store_true", help="mask four 10%% corner squares")

    h = sub.add_parser("heatmaps", help="export conv activation maps as PGM images")
    _common(h)
    h.add_argument("--images", nargs="+", required=True, help="image ids (manifest path or stem)")
    h.add_argument("--layer", type=int, default=1, help="conv layer, 1-based")
    h.add_argument("--filters", type=int, nargs="+", default=[0])
    h.add_argument("--out", type=Path, required=True)
    return parser


def _run(args) -> int:
    if args.command == "gen-synthetic":
        manifest, _ = generate_synthetic_dataset(args.n_per_class, args.seed, args.out, args.size)
        print(f"wrote {len(manifest)} images and {args.out / 'manifest.tsv'}")
        return EXIT_OK

    cfg = load_config(args.config, args.seed)
    pipe = Pipeline(cfg, args.store, args.manifest)

    if args.command in STAGE_COMMANDS:
        stage = STAGE_COMMANDS[args.command]
        path = pipe.run(stage)
        if stage in ("eval", "baseline"):
            print(pipe.report(stage).summary(), end="")
        print(f"{stage}: {path}")
    elif args.command == "run-all":
        report = pipe.run_all()
        print(report.summary(), end="")
        print(pipe.report("baseline").summary(), end="")
        print(f"cache hits: {', '.join(pipe.hits) or 'none'}")
    elif args.command == "ablate":
        if args.corners:
            masks = with_rects(pipe.manifest, lambda r: corner_rects(cfg.image_size))
        else:
            masks = load_manifest(args.mask_manifest)
        print(pipe.run_ablation(masks).summary(), end="")
    elif args.command == "heatmaps":
        for p in pipe.export_heatmaps(args.images, args.layer, args.filters, args.out):
            print(p)
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        return _run(args)
    except MissingArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except DivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigError, DecodeError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
