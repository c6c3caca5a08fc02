"""Rate experiments: LLN coupling, Riccati gap, hat coupling and L4 functional error."""

import logging
import math
from typing import List

import numpy as np

from ..config import config
from ..mfglab.empirical import FUNCTIONALS, l4_functional_samples, mean_functional
from ..mfglab.exceptions import ConfigError
from ..mfglab.model_lq import coupling_gap
from ..mfglab.models import ExperimentConfig, LadderRung, NamedCheck, RateReport
from ..mfglab.particle_systems import simulate_hat, simulate_mkv_proxy, simulate_nash
from ..mfglab.stochastic_kernel import TimeGrid, make_bundle
from ..utils.parallel import map_replications
from .fitting import fit_rate, mean_and_se, root_mean_and_se
from .registry import dt_steps_for, on_experiment, threads_for

logger = logging.getLogger(__name__)


def _rate_report(
    cfg: ExperimentConfig,
    ladder: List[LadderRung],
    expected: float,
    tolerance_key: str,
    checks: List[NamedCheck] = (),
) -> RateReport:
    tolerance = config.get_tolerance(tolerance_key)
    fit = fit_rate(ladder)
    if fit.degenerate:
        passed = True
    elif fit.slope is None:
        passed = False
    else:
        passed = abs(fit.slope - expected) <= tolerance
    passed = passed and all(check.passed for check in checks)
    logger.info(
        "%s: slope=%s (expected %s +- %s) pass=%s",
        cfg.experiment,
        fit.slope,
        expected,
        tolerance,
        passed,
    )
    return RateReport(
        ladder=ladder,
        fitted_slope=fit.slope,
        slope_se=fit.slope_se,
        expected_slope=expected,
        tolerance=tolerance,
        passed=passed,
        degenerate=fit.degenerate,
        dropped=fit.dropped,
        checks=list(checks),
    )


def _lln_replication(replication: int, cfg: ExperimentConfig) -> np.ndarray:
    """(1/n) sum_i sup_t |X^i - Y^i|^2 for every rung, on one bundle."""
    grid = TimeGrid(cfg.params.horizon, dt_steps_for(cfg))
    bundle = make_bundle(cfg.base_seed, replication, grid, max(cfg.n_ladder))
    values = np.empty(len(cfg.n_ladder))
    for a, n in enumerate(cfg.n_ladder):
        sub = bundle.prefix(n)
        nash = simulate_nash(cfg.params, n, sub)
        mkv = simulate_mkv_proxy(cfg.params, n, sub)
        values[a] = float(np.mean(np.max(np.abs(nash.states - mkv.states), axis=0) ** 2))
    return values


@on_experiment("lln_rate")
def run_lln_rate(cfg: ExperimentConfig) -> RateReport:
    """Nash versus proxy coupling in mean-square grid-sup; slope -2."""
    rows = np.array(
        map_replications(
            _lln_replication, list(range(cfg.replications)), cfg, threads=threads_for(cfg)
        )
    )
    ladder = []
    for a, n in enumerate(cfg.n_ladder):
        mean, se = mean_and_se(rows[:, a])
        ladder.append(LadderRung(n=n, statistic=mean, standard_error=se))
    return _rate_report(cfg, ladder, -2.0, "lln_rate")


@on_experiment("coupling_rate")
def run_coupling_rate(cfg: ExperimentConfig) -> RateReport:
    """Riccati gap r_n over the ladder; deterministic, slope -1."""
    steps = dt_steps_for(cfg)
    ladder = []
    for n in cfg.n_ladder:
        if n < 2:
            raise ConfigError("coupling_rate needs n >= 2", context={"field": "n_ladder"})
        ladder.append(
            LadderRung(n=n, statistic=coupling_gap(n, cfg.params, steps), standard_error=0.0)
        )
    return _rate_report(cfg, ladder, -1.0, "coupling_rate")


def _hat_replication(replication: int, cfg: ExperimentConfig) -> np.ndarray:
    """Particle-averaged sup_t |Y^i - Xhat^i|^4 for every rung."""
    grid = TimeGrid(cfg.params.horizon, dt_steps_for(cfg))
    bundle = make_bundle(cfg.base_seed, replication, grid, max(cfg.n_ladder))
    values = np.empty(len(cfg.n_ladder))
    for a, n in enumerate(cfg.n_ladder):
        sub = bundle.prefix(n)
        proxy = simulate_mkv_proxy(cfg.params, n, sub)
        hat = simulate_hat(cfg.params, n, sub, sub.w_path)
        values[a] = float(np.mean(np.max(np.abs(proxy.states - hat.states), axis=0) ** 4))
    return values


@on_experiment("hat_rate")
def run_hat_rate(cfg: ExperimentConfig) -> RateReport:
    """E[sup_t |Y^i - Xhat^i|^4]^(1/4); slope -1/2."""
    rows = np.array(
        map_replications(
            _hat_replication, list(range(cfg.replications)), cfg, threads=threads_for(cfg)
        )
    )
    ladder = []
    for a, n in enumerate(cfg.n_ladder):
        value, se = root_mean_and_se(rows[:, a], 4.0)
        ladder.append(LadderRung(n=n, statistic=value, standard_error=se))
    return _rate_report(cfg, ladder, -0.5, "hat_rate")


def _gaussian_mean_check(cfg: ExperimentConfig, n: int) -> NamedCheck:
    """E|mbar^n - mean|^4 = 3 var^2 / n^2 for a Gaussian initial law."""
    mu0 = cfg.params.mu0
    deviations = l4_functional_samples(mean_functional(), mu0, n, cfg.replications, cfg.base_seed)
    observed, se = mean_and_se(deviations)
    expected = expected_gaussian_l4(mu0.var, n) ** 4
    return NamedCheck(
        name=f"gaussian_mean_fourth_moment_n{n}",
        observed=observed,
        expected=expected,
        standard_error=se,
        passed=abs(observed - expected) <= 3.0 * se or observed == expected,
    )


@on_experiment("l4_rate")
def run_l4_rate(cfg: ExperimentConfig) -> RateReport:
    """E[|f(m^n) - f(mu_0)|^4]^(1/4) for a smooth functional; slope -1/2."""
    if cfg.functional not in FUNCTIONALS:
        raise ConfigError(
            f"unknown functional {cfg.functional}",
            context={"field": "functional", "known": sorted(FUNCTIONALS)},
        )
    functional = FUNCTIONALS[cfg.functional]()
    ladder = []
    for n in cfg.n_ladder:
        deviations = l4_functional_samples(
            functional, cfg.params.mu0, n, cfg.replications, cfg.base_seed
        )
        value, se = root_mean_and_se(deviations, 4.0)
        ladder.append(LadderRung(n=n, statistic=value, standard_error=se))

    checks = []
    if cfg.params.mu0.kind == "gaussian" and cfg.params.mu0.var > 0.0:
        checks = [_gaussian_mean_check(cfg, n) for n in (cfg.n_ladder[0], cfg.n_ladder[-1])]
        if len(cfg.n_ladder) == 1:
            checks = checks[:1]
    logger.debug("L4 ladder: %s", [(rung.n, rung.statistic) for rung in ladder])
    return _rate_report(cfg, ladder, -0.5, "l4_rate", checks)


def expected_gaussian_l4(var: float, n: int) -> float:
    """(3 var^2 / n^2)^(1/4)."""
    return math.sqrt(math.sqrt(3.0 * var * var)) / math.sqrt(n)
