"""Command line: ``toruskit analyze|sweep <config>`` and ``toruskit demo rossler``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from importlib import resources
from pathlib import Path

from .errors import ConfigError, ToruskitError
from .pipeline import load_config, run_analyze, run_sweep

LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
DEMOS = {"rossler": "rossler.json"}


def demo_config_path(name):
    if name not in DEMOS:
        raise ConfigError(f"unknown demo {name!r}; available: {sorted(DEMOS)}")
    return Path(str(resources.files("toruskit") / "data" / DEMOS[name]))


def _setup_logging():
    level = os.environ.get("TORUSKIT_LOG", "error").lower()
    if level not in LOG_LEVELS:
        raise ConfigError(f"TORUSKIT_LOG must be one of {sorted(LOG_LEVELS)}, got {level!r}")
    logging.basicConfig(level=LOG_LEVELS[level], format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)


def build_parser():
    p = argparse.ArgumentParser(prog="toruskit", description=__doc__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default=".", help="output directory (default: current)")
    common.add_argument("--tol-scale", type=float, default=1.0,
                        help="multiply every tolerance by this factor")
    common.add_argument("--jobs", type=int, default=1, help="parallel sweep rows (default 1)")
    sub = p.add_subparsers(dest="command", required=True)
    a = sub.add_parser("analyze", parents=[common], help="run the full analysis of a config")
    a.add_argument("config")
    s = sub.add_parser("sweep", parents=[common], help="classify a (mu, eps) grid")
    s.add_argument("config")
    d = sub.add_parser("demo", parents=[common], help="run a bundled demo")
    d.add_argument("name", choices=sorted(DEMOS))
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    try:
        _setup_logging()
        if args.jobs < 1:
            raise ConfigError("--jobs must be at least 1")
        path = demo_config_path(args.name) if args.command == "demo" else args.config
        cfg = load_config(path, args.tol_scale)
        if args.command == "sweep":
            rows = run_sweep(cfg, args.out, args.jobs)
            print(f"{len(rows)} cells written to {Path(args.out) / 'sweep.csv'}")
            return 0
        code = run_analyze(cfg, args.out)
        print(f"exit {code}: report written to {Path(args.out) / 'report.json'}")
        return code
    except ToruskitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
