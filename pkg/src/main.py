"""Command-line entry point for the mfglab fluctuation laboratory."""

import argparse
import logging
import sys
from typing import List, Optional

import pandas as pd
from pydantic import ValidationError

from .config import config
from .experiments import run_experiment
from .mfglab.exceptions import ConfigError, MfgLabError
from .mfglab.model_lq import ModelParams, NLabel, riccati_curve
from .mfglab.models import load_experiment_config
from .utils.output import write_outputs

logger = logging.getLogger(__name__)

EXIT_PASS = 0
EXIT_ERROR = 1
EXIT_STATISTICAL_FAILURE = 2


def configure_logging() -> None:
    """Configure logging from the loaded configuration."""
    logging.basicConfig(
        level=getattr(logging, config.log_level, logging.INFO),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )


def log_startup() -> None:
    """Log the numeric configuration in effect."""
    logger.info("mfglab starting up...")
    logger.info("Configuration loaded:")
    logger.info("  - Config file: %s", config.config_file)
    logger.info("  - Euler steps: %s (fluctuations: %s)", config.dt_steps, config.clt_dt_steps)
    logger.info("  - Simpson intervals: %s", config.quadrature_intervals)
    logger.info("  - Max covariance jitter: %s", config.covariance_max_jitter)
    logger.info("  - Quadrature tolerance: %s", config.quadrature_tolerance)
    logger.info("  - Threads: %s", config.threads)
    logger.info("  - Tolerances: %s", config.tolerances)


def _command_run(args: argparse.Namespace) -> int:
    cfg = load_experiment_config(args.config)
    report = run_experiment(cfg, seed=args.seed, threads=args.threads)
    if args.seed is not None:
        cfg = cfg.model_copy(update={"base_seed": args.seed})
    write_outputs(report, cfg, args.out)
    if not report.passed:
        logger.warning("%s failed its statistical criteria", cfg.experiment)
        return EXIT_STATISTICAL_FAILURE
    logger.info("%s passed", cfg.experiment)
    return EXIT_PASS


def _command_validate(args: argparse.Namespace) -> int:
    cfg = load_experiment_config(args.config)
    print(f"{args.config}: valid {cfg.experiment} config")
    return EXIT_PASS


def _command_riccati(args: argparse.Namespace) -> int:
    try:
        params = ModelParams.from_json_file(args.params)
        label = NLabel.parse(args.n)
    except (ValidationError, ValueError, OSError) as e:
        raise ConfigError(f"invalid riccati arguments: {e}", context={"field": "params"}) from e
    curve = riccati_curve(label, params, args.steps or config.dt_steps)
    frame = pd.DataFrame({"t": curve.grid, "phi": curve.values})
    frame.to_csv(sys.stdout, index=False, float_format="%.17g")
    return EXIT_PASS


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mfg-fluct", description="Fluctuation laboratory for the LQ mean field game"
    )
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="run an experiment config")
    run.add_argument("--config", required=True, help="ExperimentConfig JSON file")
    run.add_argument("--seed", type=int, default=None, help="override base_seed")
    run.add_argument("--out", default=None, help="output directory")
    run.add_argument("--threads", type=int, default=None, help="worker processes")
    run.set_defaults(handler=_command_run)

    validate = commands.add_parser("validate-config", help="validate a config file")
    validate.add_argument("config")
    validate.set_defaults(handler=_command_validate)

    riccati = commands.add_parser("riccati", help="print a Riccati curve as CSV")
    riccati.add_argument("--n", required=True, help="population size or 'inf'")
    riccati.add_argument("--params", required=True, help="ModelParams JSON file")
    riccati.add_argument("--steps", type=int, default=None)
    riccati.set_defaults(handler=_command_riccati)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging()
    log_startup()
    try:
        return args.handler(args)
    except MfgLabError as e:
        logger.error("%s: %s (context: %s)", type(e).__name__, e, e.context)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
