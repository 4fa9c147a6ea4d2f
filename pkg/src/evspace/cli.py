"""Command-line entry point: ``evspace run|stage|validate-config|fixture``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import pipeline
from .config import load_config
from .errors import EvspaceError
from .fixture import write_fixture


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="pipeline config file")
    common.add_argument("--out", type=Path, help="output directory (overrides config)")
    common.add_argument("--seed", type=int, help="random seed (overrides config)")
    common.add_argument("--jobs", type=int, help="worker threads for per-country work")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="evspace", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="run every stage")
    st = sub.add_parser("stage", parents=[common], help="run one stage, reusing cached upstream stages")
    st.add_argument("name", help=f"one of: {', '.join(pipeline.STAGES)}")
    st.add_argument("--no-build-deps", action="store_true", help="fail instead of rebuilding missing caches")
    sub.add_parser("validate-config", parents=[common], help="check a config file and exit")
    fx = sub.add_parser("fixture", help="write the bundled synthetic dataset and a config for it")
    fx.add_argument("directory", type=Path)
    fx.add_argument("--seed", type=int, default=7, help="generator seed")
    fx.add_argument("--firm-threshold", type=int, default=10)
    return p


def _config(args):
    if args.config is None:
        raise SystemExit("--config is required")
    cfg = load_config(args.config)
    return cfg.with_overrides(out=args.out, seed=args.seed, jobs=args.jobs).validate()


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "fixture":
            cfg = write_fixture(args.directory, seed=args.seed, firm_threshold=args.firm_threshold)
            print(cfg)
            return 0
        cfg = _config(args)
        if args.command == "validate-config":
            print(f"ok {cfg.digest()}")
            return 0
        if args.command == "run":
            out = pipeline.run(cfg)
            print(out)
            return 0
        if args.command == "stage":
            pipeline.stage(args.name, cfg, build_deps=not args.no_build_deps)
            print(Path(cfg.out) / args.name)
            return 0
    except EvspaceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 1


if __name__ == "__main__":
    raise SystemExit(main())
