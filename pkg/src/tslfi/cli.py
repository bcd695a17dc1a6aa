"""Command-line front end.

Subcommands: simulate | infer | evaluate | figure1 | figure2.
Exit codes: 0 success, 2 configuration error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .experiments import (
    ConfigError,
    ExperimentConfig,
    cmd_evaluate,
    cmd_figure1,
    cmd_figure2,
    cmd_infer,
    cmd_simulate,
)
from .flow import FlowNumericsError
from .refposterior import NoAnalyticReference
from .snpe import SnpeAbort, SnpeNumericsError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="tslfi",
        description="Sequential simulation-based inference for time series",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required,
                       help="experiment config (.toml); a directory for figure commands")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--budget-override", default=None, metavar="R,N",
                       help="override rounds,sims_per_round (desk scale)")
        p.add_argument("--extractor", choices=["autocorr", "yulenet"],
                       default=None, help="override the config extractor")

    p_sim = sub.add_parser("simulate", help="draw prior parameters and simulate")
    common(p_sim)
    p_sim.add_argument("--count", type=int, required=True)

    p_inf = sub.add_parser("infer", help="run the multi-round procedure")
    common(p_inf)

    p_eval = sub.add_parser("evaluate", help="budget-curve CSV for a finished run")
    p_eval.add_argument("--run-dir", required=True)
    p_eval.add_argument("--out", required=True, help="output CSV path")

    p_f1 = sub.add_parser("figure1", help="distance-vs-budget data per config")
    common(p_f1)

    p_f2 = sub.add_parser("figure2", help="posterior histograms + length study")
    common(p_f2)
    return parser


def _apply_overrides(config, args):
    updates = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.extractor is not None:
        updates["extractor"] = args.extractor
    if args.budget_override is not None:
        try:
            r, n = (int(v) for v in args.budget_override.split(","))
        except ValueError as exc:
            raise ConfigError(
                f"--budget-override expects R,N, got {args.budget_override!r}"
            ) from exc
        updates["rounds"] = r
        updates["sims_per_round"] = n
    if not updates:
        return config
    d = config.as_dict()
    d.update(updates)
    return ExperimentConfig(**d)


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "simulate":
            config = _apply_overrides(ExperimentConfig.from_file(args.config), args)
            cmd_simulate(config, args.count, args.out)
        elif args.command == "infer":
            config = _apply_overrides(ExperimentConfig.from_file(args.config), args)
            cmd_infer(config, args.out)
        elif args.command == "evaluate":
            cmd_evaluate(args.run_dir, args.out)
        elif args.command == "figure1":
            cmd_figure1(args.config, args.out)
        elif args.command == "figure2":
            cmd_figure2(args.config, args.out)
    except (ConfigError, NoAnalyticReference, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SnpeAbort, SnpeNumericsError, FlowNumericsError,
            np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
