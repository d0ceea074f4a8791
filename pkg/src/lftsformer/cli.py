"""Command line entry point: ``lftsformer <verb> [--config PATH] [--seed N] ...``.

Each stage verb runs the pipeline up to and including that stage. With
``--resume`` stages whose inputs are unchanged load from the run cache.
The worker thread count for numerical libraries comes from ``LFTS_THREADS``.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from .config import ConfigError, build_config, load_config
from .pipeline import STAGES, VARIANTS, StageError, ablation, run_pipeline

EXIT_OK, EXIT_STAGE, EXIT_CONFIG = 0, 1, 2


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML or JSON config, or a config.lock.json")
    common.add_argument("--seed", type=_u64, help="overrides the config seed")
    common.add_argument("--profile", choices=("desk", "paper"), help="default set applied under the config")
    common.add_argument("--out", help="output directory")
    common.add_argument("--resume", action="store_true", help="reuse cached stages with unchanged inputs")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="lftsformer", description="Feature engineering and forecasting pipeline.")
    sub = p.add_subparsers(dest="verb", required=True)
    for verb in STAGES:
        sub.add_parser(verb, parents=[common], help=f"run the pipeline through the {verb} stage")
    sub.add_parser("pipeline", parents=[common], help="run every stage")
    ab = sub.add_parser("ablate", parents=[common], help="train variants on shared features")
    ab.add_argument("--variants", default=",".join(VARIANTS),
                    help=f"comma-separated subset of {','.join(VARIANTS)}")
    ab.add_argument("--workers", type=int, default=None, help="parallel variant processes")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        over = {"profile": args.profile, "seed": args.seed, "out": args.out}
        cfg = load_config(args.config, **over) if args.config else build_config(None, **over)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.verb == "ablate":
            names = [v.strip() for v in args.variants.split(",") if v.strip()]
            res = ablation(cfg, names, workers=args.workers, resume=args.resume)
            for row in res["table"]:
                print(json.dumps(row))
            return EXIT_OK if all(r["ok"] for r in res["results"]) else EXIT_STAGE
        until = "evaluate" if args.verb == "pipeline" else args.verb
        art = run_pipeline(cfg, until=until, resume=args.resume)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if art.metrics is not None:
        print(json.dumps(art.metrics["model"]))
    print(f"artifacts in {art.out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
