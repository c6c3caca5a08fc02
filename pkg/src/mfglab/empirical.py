"""Empirical-measure statistics: 1-D Wasserstein distances, moments, smooth functionals."""

import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, NamedTuple

import numpy as np

from ..config import config
from .exceptions import DimensionMismatchError, ParameterDomainError, UnsupportedError
from .model_lq import InitialLaw
from .particle_systems import ParticlePaths
from .stochastic_kernel import SAMPLE_STREAM, stream_uniforms

logger = logging.getLogger(__name__)

MAX_EMPIRICAL_MOMENT = 8


@dataclass(frozen=True)
class EmpiricalMeasure1D:
    """Uniform measure on a finite sample; the sorted copy is computed once."""

    samples: np.ndarray

    @classmethod
    def of(cls, values) -> "EmpiricalMeasure1D":
        return cls(np.asarray(values, dtype=float).ravel())

    @property
    def size(self) -> int:
        return self.samples.size

    @cached_property
    def sorted_cache(self) -> np.ndarray:
        return np.sort(self.samples)


def wasserstein_1d(p: int, a: EmpiricalMeasure1D, b: EmpiricalMeasure1D) -> float:
    """W_p between equal-size empirical measures via the monotone rearrangement."""
    if p not in (1, 2):
        raise UnsupportedError(f"only p in {{1, 2}} is supported, got {p}")
    if a.size == 0 or b.size == 0:
        raise ParameterDomainError("Wasserstein distance of an empty sample")
    if a.size != b.size:
        raise UnsupportedError(
            "unequal sample counts are not supported",
            context={"left": a.size, "right": b.size},
        )
    gaps = np.abs(a.sorted_cache - b.sorted_cache)
    if p == 1:
        return float(np.mean(gaps))
    return float(math.sqrt(np.mean(gaps * gaps)))


def moment(m: EmpiricalMeasure1D, k: int) -> float:
    """(1/n) sum x_i^k with correctly rounded summation."""
    if not 0 <= k <= MAX_EMPIRICAL_MOMENT:
        raise UnsupportedError(f"moment order must lie in [0, {MAX_EMPIRICAL_MOMENT}]")
    if m.size == 0:
        raise ParameterDomainError("moment of an empty sample")
    if k == 0:
        return 1.0
    return math.fsum(m.samples**k) / m.size


class CouplingStats(NamedTuple):
    mean_sq_sup: float
    mean_sup: float
    w2_final: float


def _check_same_shape(a: ParticlePaths, b: ParticlePaths) -> None:
    if a.states.shape != b.states.shape or a.grid != b.grid:
        raise DimensionMismatchError(
            "path sets differ in grid or population",
            context={"left": a.states.shape, "right": b.states.shape},
        )


def path_coupling_stats(a: ParticlePaths, b: ParticlePaths) -> CouplingStats:
    """Grid-sup coupling distances and W_2 between the time-T empirical measures."""
    _check_same_shape(a, b)
    sup_gaps = np.max(np.abs(a.states - b.states), axis=0)
    return CouplingStats(
        float(np.mean(sup_gaps**2)),
        float(np.mean(sup_gaps)),
        wasserstein_1d(2, EmpiricalMeasure1D.of(a.final), EmpiricalMeasure1D.of(b.final)),
    )


def path_sup_norm_mean(paths: ParticlePaths) -> float:
    """(1/n) sum_i sup_t |X^i_t| on the grid."""
    return float(np.mean(paths.sup_norms()))


def gronwall_constant(nash: ParticlePaths, mkv: ParticlePaths, gap: float) -> float:
    """Smallest C with mean sup|X - Y| <= C * gap * mean sup|X| on this replication."""
    _check_same_shape(nash, mkv)
    mean_gap = float(np.mean(np.max(np.abs(nash.states - mkv.states), axis=0)))
    scale = gap * path_sup_norm_mean(nash)
    if scale == 0.0:
        return 0.0 if mean_gap == 0.0 else math.inf
    return mean_gap / scale


@dataclass(frozen=True)
class MeasureFunctional:
    """f(m) = h(<m, psi>) with smooth h, psi and declared derivative bounds."""

    h: Callable[[np.ndarray], np.ndarray]
    psi: Callable[[np.ndarray], np.ndarray]
    h_prime_bound: float
    h_second_bound: float
    name: str = "functional"

    def __post_init__(self):
        xs = np.linspace(-10.0, 10.0, 2001)
        step = xs[1] - xs[0]
        values = self.h(xs)
        first = np.gradient(values, step)
        second = np.gradient(first, step)
        # finite differences overshoot slightly near sharp curvature
        slack = 1.0 + 1e-3
        # absolute floor absorbs rounding noise for affine h
        floor = 1e-6
        if np.max(np.abs(first)) > slack * self.h_prime_bound + floor or np.max(
            np.abs(second[2:-2])
        ) > slack * self.h_second_bound + floor:
            raise ParameterDomainError(
                f"functional {self.name} violates its declared derivative bounds"
            )

    def __call__(self, samples: np.ndarray) -> float:
        return float(self.h(np.asarray(np.mean(self.psi(samples)))))

    def reference(self, law: InitialLaw) -> float:
        """f(mu_0) = h(<mu_0, psi>), the inner expectation by Gauss-Hermite."""
        inner = law.mixture().expect(self.psi, config.quadrature_nodes)
        return float(self.h(np.asarray(inner)))


def mean_functional() -> MeasureFunctional:
    return MeasureFunctional(lambda y: y, lambda x: x, 1.0, 0.0, name="mean")


def tanh_mean_functional() -> MeasureFunctional:
    # sup |tanh''| = 4 / (3 sqrt 3)
    return MeasureFunctional(np.tanh, lambda x: x, 1.0, 4.0 / (3.0 * math.sqrt(3.0)), name="tanh_mean")


def constant_functional(value: float = 1.0) -> MeasureFunctional:
    return MeasureFunctional(lambda y: np.zeros_like(y) + value, lambda x: x, 0.0, 0.0, name="constant")


FUNCTIONALS = {
    "mean": mean_functional,
    "tanh_mean": tanh_mean_functional,
    "constant": constant_functional,
}


def l4_functional_samples(
    f: MeasureFunctional, mu0: InitialLaw, n: int, replications: int, seed: int
) -> np.ndarray:
    """|f(m^n) - f(mu_0)|^4 over independent samples of size n."""
    reference = f.reference(mu0)
    deviations = np.empty(replications)
    for r in range(replications):
        sample = mu0.quantile(stream_uniforms(seed, r, (SAMPLE_STREAM, n), n))
        deviations[r] = (f(sample) - reference) ** 4
    return deviations


def l4_functional_error(
    f: MeasureFunctional, mu0: InitialLaw, n: int, replications: int, seed: int
) -> float:
    """Monte Carlo E[|f(m^n) - f(mu_0)|^4]^(1/4)."""
    return float(np.mean(l4_functional_samples(f, mu0, n, replications, seed)) ** 0.25)
