"""Log-log rate fits over an n-ladder."""

import logging
import math
from typing import List, NamedTuple, Optional, Sequence

import numpy as np
from scipy.stats import linregress

from ..mfglab.models import LadderRung

logger = logging.getLogger(__name__)

# rungs whose statistic is within this many standard errors of 0 are dropped
DROP_SE_MULTIPLE = 2.0


class RateFit(NamedTuple):
    slope: Optional[float]
    slope_se: Optional[float]
    degenerate: bool
    dropped: List[int]


def mean_and_se(samples: np.ndarray) -> tuple:
    """Monte Carlo mean and its standard error."""
    samples = np.asarray(samples, dtype=float)
    mean = float(np.mean(samples))
    se = float(np.std(samples, ddof=1) / math.sqrt(samples.size)) if samples.size > 1 else 0.0
    return mean, se


def root_mean_and_se(samples: np.ndarray, power: float) -> tuple:
    """E[Z]^(1/power) with the delta-method standard error."""
    mean, se = mean_and_se(samples)
    if mean <= 0.0:
        return 0.0, 0.0
    value = mean ** (1.0 / power)
    return value, se * value / (power * mean)


def fit_rate(ladder: Sequence[LadderRung]) -> RateFit:
    """Weighted least-squares slope of log statistic against log n.

    Weights are 1/se_log with se_log = se/statistic; with no Monte Carlo
    error (se = 0 everywhere) an ordinary fit is used.
    """
    if all(rung.statistic == 0.0 for rung in ladder):
        logger.warning("Every rung is exactly zero; ladder is degenerate")
        return RateFit(None, None, True, [])

    kept, dropped = [], []
    for rung in ladder:
        if rung.statistic <= DROP_SE_MULTIPLE * rung.standard_error or rung.statistic <= 0.0:
            logger.warning(
                "Dropping rung n=%s: statistic %.3e within %s SE (%.3e) of zero",
                rung.n,
                rung.statistic,
                DROP_SE_MULTIPLE,
                rung.standard_error,
            )
            dropped.append(rung.n)
        else:
            kept.append(rung)

    if len(kept) < 2:
        logger.warning("Fewer than two usable rungs; no slope fitted")
        return RateFit(None, None, False, dropped)

    x = np.log([rung.n for rung in kept])
    y = np.log([rung.statistic for rung in kept])
    se_log = np.array([rung.standard_error / rung.statistic for rung in kept])

    if np.all(se_log > 0.0):
        coefficients, cov = np.polyfit(x, y, 1, w=1.0 / se_log, cov="unscaled")
        return RateFit(float(coefficients[0]), float(math.sqrt(cov[0, 0])), False, dropped)

    result = linregress(x, y)
    return RateFit(float(result.slope), float(result.stderr), False, dropped)
