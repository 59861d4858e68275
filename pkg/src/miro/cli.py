"""Command-line front end: run experiments, plot curves, print reports."""

from __future__ import annotations

import argparse
import glob
import sys
from pathlib import Path

from .config import parse_config
from .errors import ConfigError, DataError
from .experiment import run_experiment
from .metrics import report
from .plotting import plot

__all__ = ["main"]


def _expand(patterns) -> list[str]:
    paths: list[str] = []
    for pattern in patterns:
        hits = sorted(glob.glob(pattern))
        paths.extend(hits if hits else [pattern])
    missing = [p for p in paths if not Path(p).is_file()]
    if missing:
        raise DataError(f"no such metrics file: {missing[0]}")
    return paths


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="miro",
        description="Contrastive latent world models: train, plot, report.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute an experiment config for every seed")
    p_run.add_argument("config", help="path to a key = value config file")
    p_run.add_argument("--jobs", type=int, default=1, help="seed processes to run in parallel")

    p_plot = sub.add_parser("plot", help="learning-curve SVG from metrics files")
    p_plot.add_argument("metrics", nargs="+", help="metrics CSV paths or globs")
    p_plot.add_argument("--out", required=True, help="output SVG path")
    p_plot.add_argument("--title", default="episode return")

    p_report = sub.add_parser("report", help="final-performance table from metrics files")
    p_report.add_argument("metrics", nargs="+", help="metrics CSV paths or globs")

    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            config_text = Path(args.config).read_text(encoding="utf-8")
            config = parse_config(args.config)
            return run_experiment(config, jobs=args.jobs, config_echo=config_text)
        if args.command == "plot":
            plot(_expand(args.metrics), args.out, title=args.title)
            return 0
        if args.command == "report":
            sys.stdout.write(report(_expand(args.metrics)))
            return 0
    except (ConfigError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
