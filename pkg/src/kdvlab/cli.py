"""Command-line entry point.

One subcommand per experiment plus ``validate``.  Exit codes are stable API:
0 success, 2 invalid configuration, 3 numerical failure (partial artifacts
kept with a FAILED marker), 4 I/O error.  Verbosity is controlled by the
KDVLAB_LOG environment variable (DEBUG, INFO, WARNING, ...).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .config import EXPERIMENTS, load_config, validate_config
from .errors import ConfigInvalid, KdvLabError
from .experiments import run_experiment

EXIT_OK = 0
EXIT_CONFIG_INVALID = 2
EXIT_NUMERICAL_FAILURE = 3
EXIT_IO_ERROR = 4


def _setup_logging():
    level = os.environ.get("KDVLAB_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kdvlab",
        description="Numerical laboratory for averaging in perturbed KdV")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", required=True, type=Path,
                       help="experiment configuration (YAML)")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--out", type=Path, default=None,
                       help="output directory (overrides config)")
        p.add_argument("--jobs", type=int, default=1,
                       help="worker processes; never affects results")
        p.add_argument("--force", action="store_true",
                       help="overwrite results with a different config digest")

    for name in EXPERIMENTS:
        add_common(sub.add_parser(name, help=f"run the {name} experiment"))

    v = sub.add_parser("validate", help="check a config without running")
    v.add_argument("--config", required=True, type=Path)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)

    if args.command == "validate":
        cfg, diagnostics = validate_config(args.config)
        if diagnostics:
            for d in diagnostics:
                print(f"invalid: {d}", file=sys.stderr)
            return EXIT_CONFIG_INVALID
        print("config ok")
        print(f"experiment: {cfg.experiment}")
        print(f"digest: {cfg.digest}")
        for key, value in sorted(cfg.data.items()):
            if key not in ("schema_version",):
                print(f"  {key}: {value}")
        return EXIT_OK

    try:
        cfg = load_config(args.config)
        if cfg.experiment != args.command:
            raise ConfigInvalid(
                [f"config declares experiment {cfg.experiment!r}; "
                 f"invoked subcommand is {args.command!r}"])
        if args.seed is not None:
            from .config import resolve_config
            data = dict(cfg.data)
            data["seed"] = args.seed
            cfg = resolve_config(data)
        out_dir = args.out or cfg.data.get("output")
        if out_dir is None:
            raise ConfigInvalid(["no output directory: set output: in the "
                                 "config or pass --out"])
        manifest = run_experiment(cfg, out_dir, jobs=args.jobs,
                                  force=args.force)
    except ConfigInvalid as exc:
        for d in exc.diagnostics:
            print(f"invalid: {d}", file=sys.stderr)
        return EXIT_CONFIG_INVALID
    except KdvLabError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL_FAILURE
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO_ERROR

    print(f"{cfg.experiment}: ok ({len(manifest['artifacts'])} artifacts, "
          f"digest {cfg.digest[:12]})")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
