"""Closed-form layer of the linear-quadratic systemic-risk model.

Riccati curves for the n-player and limiting games, the equilibrium feedback
rates, the master-equation value and the explicit conditional law mu_t given
the realised common noise.
"""

# pylint: disable=no-self-argument,too-few-public-methods

import json
import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Callable, Literal, Optional, Union

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.integrate import cumulative_simpson, simpson
from scipy.interpolate import CubicSpline
from scipy.special import comb, ndtri
from scipy.stats import norm

from ..config import config
from .exceptions import (
    IntegrationFailureError,
    ParameterDomainError,
    TimeRangeError,
    UnsupportedError,
)

logger = logging.getLogger(__name__)

MAX_MOMENT_ORDER = 12
TIME_SLACK = 1e-12

ArrayLike = Union[float, np.ndarray]


@dataclass(frozen=True)
class NLabel:
    """Population size tag: a finite n or the mean-field limit."""

    size: Optional[int] = None

    def __post_init__(self):
        if self.size is not None and self.size < 1:
            raise ParameterDomainError(
                f"population size must be >= 1, got {self.size}",
                context={"n": self.size},
            )

    @property
    def infinite(self) -> bool:
        return self.size is None

    @property
    def riccati_factor(self) -> float:
        """1 - 1/n^2, equal to 1 in the limit."""
        if self.size is None:
            return 1.0
        return 1.0 - 1.0 / (self.size * self.size)

    @property
    def feedback_factor(self) -> float:
        """1 - 1/n, equal to 1 in the limit."""
        if self.size is None:
            return 1.0
        return 1.0 - 1.0 / self.size

    @classmethod
    def parse(cls, value: Union["NLabel", int, str, float]) -> "NLabel":
        """Build a label from an int, "inf"/"infinity" or float('inf')."""
        if isinstance(value, NLabel):
            return value
        if isinstance(value, str):
            text = value.strip().lower()
            if text in ("inf", "infinity", "∞"):
                return INFINITE
            return cls(int(text))
        if isinstance(value, float) and math.isinf(value):
            return INFINITE
        return cls(int(value))

    def __str__(self) -> str:
        return "inf" if self.size is None else str(self.size)


INFINITE = NLabel(None)


def _double_factorial(k: int) -> int:
    return math.prod(range(k, 0, -2)) if k > 0 else 1


def gaussian_raw_moments(means: np.ndarray, variances: np.ndarray, k: int) -> np.ndarray:
    """E[(m + sqrt(v) Z)^k] for each (m, v) pair."""
    means = np.asarray(means, dtype=float)
    variances = np.asarray(variances, dtype=float)
    total = np.zeros(np.broadcast(means, variances).shape)
    for j in range(0, k + 1, 2):
        total = total + comb(k, j, exact=True) * means ** (k - j) * variances ** (
            j // 2
        ) * _double_factorial(j - 1)
    return total


@dataclass(frozen=True)
class GaussianMixtureLaw:
    """Finite mixture of Gaussians; zero-variance components are atoms."""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def moment(self, k: int) -> float:
        """Raw moment <law, x^k> for 0 <= k <= 12."""
        if not 0 <= k <= MAX_MOMENT_ORDER:
            raise UnsupportedError(
                f"moment order must lie in [0, {MAX_MOMENT_ORDER}], got {k}"
            )
        if k == 0:
            return 1.0
        return float(np.dot(self.weights, gaussian_raw_moments(self.means, self.variances, k)))

    def moments(self, max_order: int) -> np.ndarray:
        return np.array([self.moment(k) for k in range(max_order + 1)])

    @property
    def mean(self) -> float:
        return self.moment(1)

    @property
    def variance(self) -> float:
        return self.moment(2) - self.moment(1) ** 2

    def density(self, x: ArrayLike) -> ArrayLike:
        """Mixture density; atoms have no density."""
        if np.any(self.variances <= 0.0):
            raise UnsupportedError("law has atoms and no density")
        x = np.asarray(x, dtype=float)
        scales = np.sqrt(self.variances)
        values = sum(
            w * norm.pdf(x, loc=m, scale=s)
            for w, m, s in zip(self.weights, self.means, scales)
        )
        return values

    def expect(self, fn: Callable[[np.ndarray], np.ndarray], nodes: int) -> float:
        """<law, fn> by Gauss-Hermite quadrature on each component."""
        points, quad_weights = hermegauss(nodes)
        quad_weights = quad_weights / math.sqrt(2.0 * math.pi)
        total = 0.0
        for w, m, v in zip(self.weights, self.means, self.variances):
            if v <= 0.0:
                total += w * float(fn(np.array([m]))[0])
            else:
                total += w * float(np.dot(quad_weights, fn(m + math.sqrt(v) * points)))
        return total

    def shifted(self, delta: float) -> "GaussianMixtureLaw":
        return GaussianMixtureLaw(self.weights, self.means + delta, self.variances)


class InitialLaw(BaseModel):
    """Distribution of X_0: Gaussian, symmetric two-point, or a point mass."""

    model_config = ConfigDict(frozen=True)

    kind: Literal["gaussian", "two_point", "point"] = "gaussian"
    mean: float = 0.0
    var: float = Field(default=1.0, ge=0.0)

    @model_validator(mode="after")
    def validate_point_mass(self):
        """A point mass carries no variance."""
        if self.kind == "point" and self.var != 0.0:
            raise ValueError("point mass must have var = 0")
        return self

    def mixture(self) -> GaussianMixtureLaw:
        """Represent the law as a Gaussian mixture."""
        if self.kind == "gaussian":
            return GaussianMixtureLaw(
                np.array([1.0]), np.array([self.mean]), np.array([self.var])
            )
        if self.kind == "two_point":
            spread = math.sqrt(self.var)
            return GaussianMixtureLaw(
                np.array([0.5, 0.5]),
                np.array([self.mean - spread, self.mean + spread]),
                np.zeros(2),
            )
        return GaussianMixtureLaw(np.array([1.0]), np.array([self.mean]), np.zeros(1))

    def moment(self, k: int) -> float:
        return self.mixture().moment(k)

    def quantile(self, u: np.ndarray) -> np.ndarray:
        """Inverse CDF applied to uniforms in (0, 1)."""
        u = np.asarray(u, dtype=float)
        if self.kind == "gaussian":
            return self.mean + math.sqrt(self.var) * ndtri(u)
        if self.kind == "two_point":
            spread = math.sqrt(self.var)
            return np.where(u < 0.5, self.mean - spread, self.mean + spread)
        return np.full(u.shape, self.mean)

    def check_fourth_moment(self, sample_size: int = 100_000, seed: int = 0) -> float:
        """Empirical fourth moment of a large quantile sample; must be finite."""
        rng = np.random.default_rng(seed)
        u = rng.random(sample_size) + 2.0**-54
        value = float(np.mean(self.quantile(u) ** 4))
        if not math.isfinite(value):
            raise ParameterDomainError(
                "initial law has no finite fourth moment", context={"kind": self.kind}
            )
        return value


class ModelParams(BaseModel):
    """Constants of the LQ model; JSON keys are fixed for config files."""

    model_config = ConfigDict(frozen=True, populate_by_name=True)

    b_bar: float = Field(..., gt=0.0)
    q: float = 0.0
    eps: float = Field(..., ge=0.0)
    g_bar: float = Field(..., ge=0.0)
    sigma: float = Field(..., ge=0.0)
    sigma0: float = Field(default=0.0, ge=0.0)
    horizon: float = Field(..., gt=0.0, alias="T")
    mu0: InitialLaw = Field(default_factory=InitialLaw)

    @model_validator(mode="after")
    def validate_domain(self):
        """Enforce 0 <= q^2 <= eps."""
        self.check_domain()
        return self

    def check_domain(self) -> None:
        if self.q * self.q > self.eps:
            raise ParameterDomainError(
                f"parameter constraint q^2 <= eps violated: q^2={self.q**2}, eps={self.eps}",
                context={"q": self.q, "eps": self.eps},
            )

    @property
    def beta(self) -> float:
        """Mean-reversion part b_bar + q of every feedback rate."""
        return self.b_bar + self.q

    @property
    def gamma(self) -> float:
        """Inhomogeneity eps - q^2 of the Riccati equation."""
        return self.eps - self.q * self.q

    @classmethod
    def baseline(cls, **overrides) -> "ModelParams":
        values = {
            "b_bar": 1.0,
            "q": 0.5,
            "eps": 1.0,
            "g_bar": 0.3,
            "sigma": 0.5,
            "sigma0": 0.3,
            "T": 1.0,
            "mu0": InitialLaw(kind="gaussian", mean=0.0, var=1.0),
        }
        values.update(overrides)
        return cls(**values)

    @classmethod
    def from_json_file(cls, path: Union[str, Path]) -> "ModelParams":
        with open(path, "r", encoding="utf-8") as f:
            return cls.model_validate(json.load(f))

    def to_json(self) -> str:
        return self.model_dump_json(by_alias=True)


def _checked_times(t: ArrayLike, p: ModelParams) -> np.ndarray:
    times = np.asarray(t, dtype=float)
    slack = TIME_SLACK * p.horizon
    if np.any(times < -slack) or np.any(times > p.horizon + slack):
        raise TimeRangeError(
            f"time outside [0, {p.horizon}]",
            context={"min": float(np.min(times)), "max": float(np.max(times))},
        )
    return np.clip(times, 0.0, p.horizon)


def _unwrap(values: np.ndarray, like: ArrayLike) -> ArrayLike:
    return float(values) if np.ndim(like) == 0 else values


def riccati_roots(n: Union[NLabel, int, str], p: ModelParams):
    """delta_n^+ and delta_n^-."""
    label = NLabel.parse(n)
    root = math.sqrt(p.beta**2 + label.riccati_factor * p.gamma)
    return -p.beta + root, -p.beta - root


@dataclass(frozen=True)
class RiccatiCurve:
    """phi^n sampled on an increasing time grid."""

    grid: np.ndarray
    values: np.ndarray
    n_label: NLabel

    @property
    def terminal(self) -> float:
        return float(self.values[-1])

    def at(self, t: ArrayLike) -> ArrayLike:
        return _unwrap(CubicSpline(self.grid, self.values)(np.asarray(t, dtype=float)), t)

    def sup_distance(self, other: "RiccatiCurve") -> float:
        return float(np.max(np.abs(self.values - other.at(self.grid))))


def phi_closed_form(t: ArrayLike, n: Union[NLabel, int, str], p: ModelParams) -> ArrayLike:
    """phi^n_t from the explicit solution, in a cancellation-free arrangement.

    Numerator and denominator are divided by exp(spread * (T - t)) so that
    only expm1 and decaying exponentials appear.
    """
    p.check_domain()
    label = NLabel.parse(n)
    times = _checked_times(t, p)
    d_plus, d_minus = riccati_roots(label, p)
    spread = d_plus - d_minus
    if spread * p.horizon < config.riccati_degenerate_threshold:
        logger.warning(
            "Riccati roots nearly coincide (spread=%.3e); using ODE fallback", spread
        )
        return _unwrap(_phi_from_oracle(times, label, p), t)

    tau = p.horizon - times
    u = -np.expm1(-spread * tau)
    v = spread * np.exp(-spread * tau)
    numerator = p.gamma * u + p.g_bar * (d_plus * u + v)
    denominator = v - d_minus * u + p.g_bar * label.riccati_factor * u
    values = np.where(tau == 0.0, p.g_bar, numerator / denominator)
    return _unwrap(values, t)


def _phi_from_oracle(times: np.ndarray, label: NLabel, p: ModelParams) -> np.ndarray:
    curve = riccati_ode_oracle(label, p, config.riccati_fallback_steps)
    return np.asarray(curve.at(times))


def _riccati_backward_rhs(phi: float, beta: float, factor: float, gamma: float) -> float:
    return -(2.0 * beta * phi + factor * phi * phi - gamma)


def riccati_ode_oracle(n: Union[NLabel, int, str], p: ModelParams, steps: int) -> RiccatiCurve:
    """Integrate the Riccati ODE backward from phi_T = g_bar with classical RK4."""
    if steps < 100:
        raise UnsupportedError(f"steps must be >= 100, got {steps}")
    label = NLabel.parse(n)
    beta, factor, gamma = p.beta, label.riccati_factor, p.gamma
    blowup = config.riccati_blowup_threshold
    h = p.horizon / steps

    values = np.empty(steps + 1)
    phi = p.g_bar
    values[steps] = phi
    for j in range(steps, 0, -1):
        k1 = _riccati_backward_rhs(phi, beta, factor, gamma)
        k2 = _riccati_backward_rhs(phi + 0.5 * h * k1, beta, factor, gamma)
        k3 = _riccati_backward_rhs(phi + 0.5 * h * k2, beta, factor, gamma)
        k4 = _riccati_backward_rhs(phi + h * k3, beta, factor, gamma)
        phi = phi + h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
        if not math.isfinite(phi) or abs(phi) > blowup:
            raise IntegrationFailureError(
                "Riccati integration blew up",
                context={"step": j, "n": str(label), "value": phi},
            )
        values[j - 1] = phi
    return RiccatiCurve(np.linspace(0.0, p.horizon, steps + 1), values, label)


def riccati_curve(n: Union[NLabel, int, str], p: ModelParams, steps: int) -> RiccatiCurve:
    """Closed-form phi^n on a uniform grid with `steps` intervals."""
    label = NLabel.parse(n)
    grid = np.linspace(0.0, p.horizon, steps + 1)
    return RiccatiCurve(grid, np.asarray(phi_closed_form(grid, label, p)), label)


def coupling_gap(n: int, p: ModelParams, grid_steps: int) -> float:
    """sup_t |(1 - 1/n) phi^n_t - phi^inf_t| on a uniform grid."""
    if n < 2:
        raise UnsupportedError(f"coupling gap needs n >= 2, got {n}")
    label = NLabel(n)
    grid = np.linspace(0.0, p.horizon, grid_steps + 1)
    scaled = label.feedback_factor * np.asarray(phi_closed_form(grid, label, p))
    limit = np.asarray(phi_closed_form(grid, INFINITE, p))
    return float(np.max(np.abs(scaled - limit)))


def drift_rate_nash(t: ArrayLike, n: int, p: ModelParams) -> ArrayLike:
    """c_n(t) = b_bar + q + phi^n_t (1 - 1/n)."""
    label = NLabel(int(n))
    phi = np.asarray(phi_closed_form(t, label, p))
    return _unwrap(p.beta + phi * label.feedback_factor, t)


def drift_rate_mkv(t: ArrayLike, p: ModelParams) -> ArrayLike:
    """c(t) = b_bar + q + phi^inf_t."""
    phi = np.asarray(phi_closed_form(t, INFINITE, p))
    return _unwrap(p.beta + phi, t)


def master_value(t: float, x: ArrayLike, mbar: float, p: ModelParams) -> ArrayLike:
    """U(t, x, m) = phi^inf_t / 2 (mbar - x)^2."""
    phi = phi_closed_form(t, INFINITE, p)
    return 0.5 * phi * (mbar - np.asarray(x, dtype=float)) ** 2


def master_value_dx(t: float, x: ArrayLike, mbar: float, p: ModelParams) -> ArrayLike:
    """D_x U(t, x, m) = -phi^inf_t (mbar - x)."""
    phi = phi_closed_form(t, INFINITE, p)
    return -phi * (mbar - np.asarray(x, dtype=float))


class LawFlow:
    """ell_t and the conditional variance inflation sigma^2 ell_t^2 int_0^t ell_s^-2 ds."""

    def __init__(self, p: ModelParams, intervals: Optional[int] = None):
        self.params = p
        base = intervals or config.quadrature_intervals
        self.intervals = base + (base % 2)
        self._cache = {}

    def _integrals(self, t: float):
        if t in self._cache:
            return self._cache[t]
        if t == 0.0:
            result = (1.0, 0.0)
        else:
            s = np.linspace(0.0, t, self.intervals + 1)
            rates = np.asarray(drift_rate_mkv(s, self.params))
            cumulative = cumulative_simpson(rates, x=s, initial=0.0)
            ell = math.exp(-cumulative[-1])
            inverse_sq = simpson(np.exp(2.0 * cumulative), x=s)
            result = (ell, self.params.sigma**2 * ell * ell * inverse_sq)
        self._cache[t] = result
        return result

    def ell(self, t: ArrayLike) -> ArrayLike:
        times = np.atleast_1d(_checked_times(t, self.params))
        values = np.array([self._integrals(float(s))[0] for s in times])
        return _unwrap(values.reshape(np.shape(t)), t)

    def variance(self, t: ArrayLike) -> ArrayLike:
        times = np.atleast_1d(_checked_times(t, self.params))
        values = np.array([self._integrals(float(s))[1] for s in times])
        return _unwrap(values.reshape(np.shape(t)), t)


@lru_cache(maxsize=32)
def law_flow(p: ModelParams) -> LawFlow:
    return LawFlow(p)


def mu_t_explicit(t: float, w_t: float, p: ModelParams) -> GaussianMixtureLaw:
    """Conditional law of the limiting state given W_t = w_t.

    mu_t = int N(ell_t x + (1 - ell_t) mean_0 + sigma0 w_t, ell_t^2 var_x + v_t) dmu_0(x).
    """
    t = float(_checked_times(t, p))
    flow = law_flow(p)
    ell = flow.ell(t)
    inflation = flow.variance(t)
    initial = p.mu0.mixture()
    mean0 = p.mu0.mean
    means = ell * initial.means + (1.0 - ell) * mean0 + p.sigma0 * w_t
    variances = ell * ell * initial.variances + inflation
    return GaussianMixtureLaw(initial.weights, means, variances)


def centered_moments(t: float, p: ModelParams, max_order: int) -> np.ndarray:
    """Moments of mu_t - mean(mu_t); independent of the common noise."""
    law = mu_t_explicit(t, 0.0, p).shifted(-p.mu0.mean)
    return law.moments(max_order)


def raw_moments_from_centered(centered: np.ndarray, mean: ArrayLike) -> np.ndarray:
    """Shift centered moments C_0..C_K to raw moments M_0..M_K at `mean` (vectorised)."""
    mean = np.asarray(mean, dtype=float)
    order = len(centered) - 1
    raw = np.zeros(mean.shape + (order + 1,))
    for j in range(order + 1):
        for i in range(j + 1):
            raw[..., j] += comb(j, i, exact=True) * mean ** (j - i) * centered[i]
    raw[..., 0] = 1.0
    return raw
