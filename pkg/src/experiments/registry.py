"""Experiment registration and dispatch."""

import logging
from typing import Callable, Dict, Optional

from ..config import config
from ..mfglab.exceptions import ConfigError
from ..mfglab.models import ExperimentConfig
from ..utils.output import Report, code_version, config_hash

logger = logging.getLogger(__name__)

Runner = Callable[[ExperimentConfig], Report]

_RUNNERS: Dict[str, Runner] = {}


def on_experiment(name: str) -> Callable[[Runner], Runner]:
    """Register `func` as the runner of experiment `name`."""

    def decorator(func: Runner) -> Runner:
        if name in _RUNNERS:
            raise ConfigError(f"experiment {name} registered twice", context={"field": "experiment"})
        _RUNNERS[name] = func
        return func

    return decorator


def registered() -> Dict[str, Runner]:
    return dict(_RUNNERS)


def threads_for(cfg: ExperimentConfig) -> int:
    return cfg.threads if cfg.threads is not None else config.threads


def dt_steps_for(cfg: ExperimentConfig, clt: bool = False) -> int:
    if cfg.dt_steps is not None:
        return cfg.dt_steps
    return config.clt_dt_steps if clt else config.dt_steps


def run_experiment(
    cfg: ExperimentConfig, seed: Optional[int] = None, threads: Optional[int] = None
) -> Report:
    """Dispatch to the registered runner and stamp provenance on the report."""
    updates = {}
    if seed is not None:
        updates["base_seed"] = seed
    if threads is not None:
        updates["threads"] = threads
    if updates:
        cfg = cfg.model_copy(update=updates)

    runner = _RUNNERS.get(cfg.experiment)
    if runner is None:
        raise ConfigError(
            f"no runner registered for {cfg.experiment}", context={"field": "experiment"}
        )

    logger.info(
        "Running %s: seed=%s ladder=%s M=%s threads=%s",
        cfg.experiment,
        cfg.base_seed,
        cfg.n_ladder,
        cfg.replications,
        threads_for(cfg),
    )
    report = runner(cfg)
    return report.model_copy(
        update={
            "experiment": cfg.experiment,
            "seed": cfg.base_seed,
            "config_hash": config_hash(cfg),
            "code_version": code_version(),
            "threads": threads_for(cfg),
        }
    )
