#!/usr/bin/env python3
"""
Script to run an experiment or summarize a finished one
"""

import argparse
import json
import sys
from pathlib import Path
from typing import List, Optional

# Add the project root to the Python path
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from app.core.errors import ConfigError, HypothesisViolation, PlaqueError
from app.core.logging import logger, set_level
from app.experiments import load_experiment_config, report, run

EXIT_OK = 0
EXIT_CHECKS_FAILED = 1
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_HYPOTHESIS = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Radial steady states, mode linearizations and bifurcation points of the plaque model"
    )
    action = parser.add_mutually_exclusive_group(required=True)
    action.add_argument("--config", type=Path, help="experiment YAML file")
    action.add_argument("--report", type=Path, metavar="MANIFEST", help="summarize a manifest or run directory")
    parser.add_argument("--out", type=Path, default=None, help="output root (run directory is <out>/<name>)")
    parser.add_argument("--grid", type=int, default=None, help="number of grid nodes (odd)")
    parser.add_argument("--seed", type=int, default=None, help="random seed for property checks")
    parser.add_argument("--jobs", type=int, default=None, help="worker processes")
    parser.add_argument(
        "--log-level", type=str.upper, choices=["DEBUG", "INFO", "WARNING", "ERROR"], default=None
    )
    return parser


def exit_status(exc: PlaqueError) -> int:
    if isinstance(exc, HypothesisViolation):
        return EXIT_HYPOTHESIS
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    # SOLVER_ERRORS, ManifestError and anything unclassified
    return EXIT_SOLVER


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.log_level:
        set_level(args.log_level)
    try:
        if args.report is not None:
            print(report(args.report))
            return EXIT_OK
        config = load_experiment_config(
            args.config, out=args.out, grid=args.grid, seed=args.seed, jobs=args.jobs
        )
        record = run(config)
    except PlaqueError as exc:
        logger.error(f"{type(exc).__name__}: {exc}")
        print(json.dumps(exc.as_dict(), sort_keys=True), file=sys.stderr)
        return exit_status(exc)
    return EXIT_OK if record["passed"] else EXIT_CHECKS_FAILED


if __name__ == "__main__":
    sys.exit(main())
