"""Command-line entry point: run experiments, validate configs, emit figure data."""

from __future__ import annotations

import argparse
import sys

from .errors import ConfigError, SkySchedError
from .experiment import FIGURE_KINDS, emit_figure_data, load_config, run_experiment


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="skysched", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run every (agent, sweep point, seed) in a config")
    p_run.add_argument("config", help="path to the experiment YAML")
    p_run.add_argument("--quiet", action="store_true", help="suppress per-run progress lines")

    p_val = sub.add_parser("validate", help="validate a config and exit")
    p_val.add_argument("config", help="path to the experiment YAML")

    p_fig = sub.add_parser("figure", help="emit a figure-ready table from persisted metrics")
    p_fig.add_argument("kind", choices=FIGURE_KINDS)
    p_fig.add_argument("metrics_dir", help="directory containing metrics.csv / summary.json")

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "validate":
            load_config(args.config)
            print(f"OK: {args.config}")
            return 0
        if args.command == "run":
            cfg = load_config(args.config)
            progress = None if args.quiet else lambda msg: print(msg, file=sys.stderr)
            result = run_experiment(cfg, progress=progress)
            print(f"metrics: {result.metrics_path}")
            print(f"summary: {result.summary_path}")
            return 0
        path = emit_figure_data(args.metrics_dir, args.kind)
        print(f"figure: {path}")
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except SkySchedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
