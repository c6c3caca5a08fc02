"""Gaussian-tail shape of the Nash versus proxy Wasserstein distance."""

import logging

import numpy as np
from scipy.stats import linregress

from ..config import config
from ..mfglab.empirical import EmpiricalMeasure1D, wasserstein_1d
from ..mfglab.models import ConcentrationReport, ExperimentConfig, TailPoint
from ..mfglab.particle_systems import simulate_mkv_proxy, simulate_nash
from ..mfglab.stochastic_kernel import TimeGrid, make_bundle
from ..utils.parallel import map_replications
from .registry import dt_steps_for, on_experiment, threads_for

logger = logging.getLogger(__name__)

THRESHOLD_LEVELS = np.linspace(0.0, 0.995, 60)
FIT_FROM_LEVEL = 0.75
MIN_TAIL_COUNT = 5


def _w1_replication(replication: int, cfg: ExperimentConfig) -> float:
    """W_1 between the time-T empirical measures of the Nash and proxy systems."""
    n = max(cfg.n_ladder)
    grid = TimeGrid(cfg.params.horizon, dt_steps_for(cfg))
    bundle = make_bundle(cfg.base_seed, replication, grid, n)
    nash = simulate_nash(cfg.params, n, bundle)
    mkv = simulate_mkv_proxy(cfg.params, n, bundle)
    return wasserstein_1d(1, EmpiricalMeasure1D.of(nash.final), EmpiricalMeasure1D.of(mkv.final))


def tail_curve(distances: np.ndarray) -> list:
    """P(W1 > a) on quantile thresholds; the upper quartile enters the fit."""
    distances = np.asarray(distances, dtype=float)
    thresholds = np.unique(np.quantile(distances, THRESHOLD_LEVELS))
    cutoff = np.quantile(distances, FIT_FROM_LEVEL)
    curve = []
    for a in thresholds:
        exceed = int(np.sum(distances > a))
        tail = exceed / distances.size
        curve.append(
            TailPoint(
                a=float(a),
                tail=tail,
                log_tail=float(np.log(tail)) if exceed else None,
                in_fit=bool(a >= cutoff and exceed >= MIN_TAIL_COUNT),
            )
        )
    return curve


@on_experiment("concentration")
def run_concentration(cfg: ExperimentConfig) -> ConcentrationReport:
    """log P(W1 > a) against a^2: non-increasing with a negative, linear upper tail."""
    n = max(cfg.n_ladder)
    distances = np.array(
        map_replications(
            _w1_replication, list(range(cfg.replications)), cfg, threads=threads_for(cfg)
        )
    )
    curve = tail_curve(distances)
    tails = [point.tail for point in curve]
    monotone = all(b <= a for a, b in zip(tails, tails[1:]))

    fitted = [point for point in curve if point.in_fit]
    slope = r_squared = None
    if len(fitted) >= 3:
        result = linregress([point.a**2 for point in fitted], [point.log_tail for point in fitted])
        slope, r_squared = float(result.slope), float(result.rvalue**2)
    else:
        logger.warning("Only %s tail points available for the concentration fit", len(fitted))

    threshold = config.get_tolerance("concentration_r2")
    passed = bool(monotone and slope is not None and slope < 0.0 and r_squared >= threshold)
    logger.info("Concentration: slope=%s r2=%s pass=%s", slope, r_squared, passed)
    return ConcentrationReport(
        n=n,
        replications=cfg.replications,
        curve=curve,
        slope=slope,
        r_squared=r_squared,
        monotone=monotone,
        passed=passed,
    )
