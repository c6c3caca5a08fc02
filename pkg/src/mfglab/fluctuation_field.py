"""Fluctuation field S^n_t = sqrt(n)(m^n_t - mu_t) against test functions, and
weighted Sobolev norms on a uniform grid."""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from numpy.polynomial import HermiteE, Polynomial
from scipy.integrate import quad, trapezoid

from ..config import config
from .exceptions import (
    DimensionMismatchError,
    ParameterDomainError,
    QuadratureError,
    TruncationDomainError,
    UnsupportedError,
)
from .model_lq import GaussianMixtureLaw, ModelParams, mu_t_explicit
from .particle_systems import ParticlePaths

logger = logging.getLogger(__name__)

MAX_SUITE_DEGREE = 6
TEST_FUNCTION_KINDS = ("monomial", "hermite", "bump")


@dataclass(frozen=True)
class TestFunction:
    """Test function with its first two derivatives.

    Polynomial kinds carry `coefficients` in the monomial basis so that
    expectations against mu_t are exact moment combinations.
    """

    __test__ = False

    label: str
    kind: str
    fn: Callable[[np.ndarray], np.ndarray]
    d1: Callable[[np.ndarray], np.ndarray]
    d2: Callable[[np.ndarray], np.ndarray]
    degree: Optional[int] = None
    coefficients: Optional[np.ndarray] = None
    center: float = 0.0
    width: float = 1.0

    @property
    def is_polynomial(self) -> bool:
        return self.coefficients is not None

    def support(self):
        if self.kind == "bump":
            return self.center - self.width, self.center + self.width
        return -math.inf, math.inf

    def check_derivatives(self, points: int = 100, step: float = 1e-4) -> float:
        """Max |phi' - central difference| on interior grid points."""
        low, high = self.support()
        if math.isinf(low):
            low, high = -2.0, 2.0
        xs = np.linspace(low, high, points + 2)[1:-1]
        central = (self.fn(xs + step) - self.fn(xs - step)) / (2.0 * step)
        return float(np.max(np.abs(self.d1(xs) - central)))


def _polynomial_test_function(label: str, kind: str, poly, degree: int) -> TestFunction:
    poly = poly.convert(kind=Polynomial)
    first, second = poly.deriv(1), poly.deriv(2)
    coefficients = np.zeros(degree + 1)
    coefficients[: len(poly.coef)] = poly.coef
    return TestFunction(
        label=label,
        kind=kind,
        fn=lambda x: poly(np.asarray(x, dtype=float)),
        d1=lambda x: first(np.asarray(x, dtype=float)),
        d2=lambda x: second(np.asarray(x, dtype=float)),
        degree=degree,
        coefficients=coefficients,
    )


def from_polynomial(poly, label: str = "poly") -> TestFunction:
    """Test function from any numpy polynomial series."""
    poly = poly.convert(kind=Polynomial)
    return _polynomial_test_function(label, "monomial", poly, max(poly.degree(), 0))


def monomial(k: int) -> TestFunction:
    return _polynomial_test_function(f"x^{k}", "monomial", Polynomial.basis(k), k)


def hermite(k: int) -> TestFunction:
    """Probabilists' Hermite polynomial He_k."""
    return _polynomial_test_function(f"He_{k}", "hermite", HermiteE.basis(k), k)


def bump(center: float, width: float) -> TestFunction:
    """exp(-1/(1 - r^2)) with r = (x - center)/width, zero outside |r| < 1."""

    def parts(x):
        r = (np.asarray(x, dtype=float) - center) / width
        inside = np.abs(r) < 1.0
        safe = np.where(inside, r, 0.0)
        gap = 1.0 - safe * safe
        value = np.where(inside, np.exp(-1.0 / gap), 0.0)
        g1 = -2.0 * safe / gap**2
        g2 = -2.0 / gap**2 - 8.0 * safe * safe / gap**3
        return inside, value, g1, g2

    def fn(x):
        return parts(x)[1]

    def d1(x):
        inside, value, g1, _ = parts(x)
        return np.where(inside, value * g1 / width, 0.0)

    def d2(x):
        inside, value, g1, g2 = parts(x)
        return np.where(inside, value * (g1 * g1 + g2) / width**2, 0.0)

    return TestFunction(
        label=f"bump({center:g},{width:g})", kind="bump", fn=fn, d1=d1, d2=d2,
        center=center, width=width,
    )


def dilate(phi: TestFunction, ell: float) -> TestFunction:
    """x -> phi(ell x); <S_t, phi(ell_t .)> is the ell-transformed field."""
    coefficients = None
    if phi.coefficients is not None:
        coefficients = phi.coefficients * ell ** np.arange(len(phi.coefficients))
    return TestFunction(
        label=f"{phi.label}@{ell:g}",
        kind=phi.kind,
        fn=lambda x: phi.fn(ell * np.asarray(x, dtype=float)),
        d1=lambda x: ell * phi.d1(ell * np.asarray(x, dtype=float)),
        d2=lambda x: ell * ell * phi.d2(ell * np.asarray(x, dtype=float)),
        degree=phi.degree,
        coefficients=coefficients,
        center=phi.center / ell,
        width=phi.width / ell,
    )


def make_test_suite(kind: str, max_degree: int) -> List[TestFunction]:
    """Monomials or Hermite polynomials of degree 0..K, or K + 1 bumps on [-2, 2]."""
    if kind not in TEST_FUNCTION_KINDS:
        raise UnsupportedError(f"unsupported test function kind: {kind}")
    if not 0 <= max_degree <= MAX_SUITE_DEGREE:
        raise UnsupportedError(f"max_degree must lie in [0, {MAX_SUITE_DEGREE}]")
    if kind == "monomial":
        return [monomial(k) for k in range(max_degree + 1)]
    if kind == "hermite":
        return [hermite(k) for k in range(max_degree + 1)]
    centers = np.linspace(-2.0, 2.0, max_degree + 1) if max_degree else np.array([0.0])
    return [bump(float(c), 1.0) for c in centers]


def expect_under(law: GaussianMixtureLaw, phi: TestFunction) -> float:
    """<law, phi>: exact for polynomials, quadrature otherwise."""
    if phi.is_polynomial:
        return float(
            sum(c * law.moment(k) for k, c in enumerate(phi.coefficients) if c != 0.0)
        )
    tolerance = config.quadrature_tolerance
    nodes = config.quadrature_nodes
    value = law.expect(phi.fn, nodes)
    check = law.expect(phi.fn, 2 * nodes + 1)
    if abs(value - check) <= tolerance:
        return value

    logger.debug(
        "Gauss-Hermite disagreement %.2e for %s; using adaptive quadrature",
        abs(value - check),
        phi.label,
    )
    low, high = phi.support()
    total = 0.0
    for w, m, v in zip(law.weights, law.means, law.variances):
        if v <= 0.0:
            total += w * float(phi.fn(np.array([m]))[0])
            continue
        s = math.sqrt(v)
        integrand = lambda x, m=m, s=s: float(phi.fn(np.array([x]))[0]) * math.exp(
            -0.5 * ((x - m) / s) ** 2
        ) / (s * math.sqrt(2.0 * math.pi))
        a, b = max(low, m - 12.0 * s), min(high, m + 12.0 * s)
        if a >= b:
            continue
        result, error = quad(integrand, a, b, epsabs=tolerance / 10.0, limit=200)
        if error > tolerance:
            raise QuadratureError(
                f"quadrature did not converge for {phi.label}",
                context={"error": error, "tolerance": tolerance},
            )
        total += w * result
    return total


@dataclass(frozen=True)
class FluctuationSample:
    """<S^n_t, phi_k> for one replication, shape [times, testfns]."""

    times: np.ndarray
    testfns: Sequence[TestFunction]
    values: np.ndarray
    n: int
    replication_id: int

    @property
    def labels(self) -> List[str]:
        return [phi.label for phi in self.testfns]


def fluctuation_values(
    paths: ParticlePaths,
    w_path: np.ndarray,
    testfns: Sequence[TestFunction],
    times: Sequence[float],
    p: ModelParams,
) -> FluctuationSample:
    """sqrt(n) ((1/n) sum phi(X^i_t) - <mu_t, phi>) with mu_t given the realised W."""
    n = paths.n_particles
    w_path = np.asarray(w_path, dtype=float)
    if w_path.shape != (paths.grid.n_steps + 1,):
        raise DimensionMismatchError("w_path does not match the path grid")
    root_n = math.sqrt(n)
    values = np.empty((len(times), len(testfns)))
    for a, t in enumerate(times):
        index = paths.grid.index_of(t)
        x = paths.states[index]
        law = mu_t_explicit(t, w_path[index], p)
        for b, phi in enumerate(testfns):
            empirical = float(np.sum(phi.fn(x)) / n)
            values[a, b] = root_n * (empirical - expect_under(law, phi))
    return FluctuationSample(
        np.asarray(times, dtype=float), list(testfns), values, n, paths.seed_record.replication_id
    )


def dump_fluctuations_csv(samples: Sequence[FluctuationSample], path: Union[str, Path]) -> None:
    """CSV with columns replication, time, testfn_label, value."""
    rows = [
        (sample.replication_id, t, label, sample.values[a, b])
        for sample in samples
        for a, t in enumerate(sample.times)
        for b, label in enumerate(sample.labels)
    ]
    frame = pd.DataFrame(rows, columns=["replication", "time", "testfn_label", "value"])
    frame.to_csv(path, index=False, float_format="%.17g")


def lambda_d(d: int) -> int:
    """Regularity index floor(d/2) + 1."""
    if d < 1:
        raise UnsupportedError(f"dimension must be >= 1, got {d}")
    return d // 2 + 1


@dataclass(frozen=True)
class SobolevGridFn:
    """Samples of a function on a symmetric uniform grid over [-L, L]."""

    grid: np.ndarray
    values: np.ndarray
    spacing: float = field(default=0.0)

    def __post_init__(self):
        if self.grid.shape != self.values.shape or self.grid.size < 5:
            raise DimensionMismatchError("grid and values must match and hold >= 5 points")
        if not np.isclose(self.grid[0], -self.grid[-1]):
            raise DimensionMismatchError("Sobolev grid must be symmetric about 0")
        if self.spacing == 0.0:
            object.__setattr__(self, "spacing", float(self.grid[1] - self.grid[0]))

    @property
    def half_width(self) -> float:
        return float(self.grid[-1])

    @classmethod
    def from_callable(
        cls,
        fn: Callable[[np.ndarray], np.ndarray],
        half_width: Optional[float] = None,
        spacing: Optional[float] = None,
    ) -> "SobolevGridFn":
        half_width = half_width if half_width is not None else config.sobolev_half_width
        spacing = spacing if spacing is not None else config.sobolev_spacing
        intervals = int(round(2.0 * half_width / spacing))
        grid = np.linspace(-half_width, half_width, intervals + 1)
        return cls(grid, np.asarray(fn(grid), dtype=float), 2.0 * half_width / intervals)


def sobolev_weight(x: np.ndarray, alpha: float) -> np.ndarray:
    """(1 + |x|^2)^(-alpha).

    Equivalent to 1 / (1 + |x|^(2 alpha)) for alpha > 0, with constants
    between min(1, 2^(1 - alpha)) and max(1, 2^(1 - alpha)), so both define
    the same space. Nonincreasing in alpha at every x, and identically 1 at
    alpha = 0.
    """
    if not math.isfinite(alpha) or alpha < 0.0:
        raise ParameterDomainError(f"Sobolev weight exponent must be >= 0, got {alpha}")
    return (1.0 + x * x) ** (-alpha)


def sobolev_norm(g: SobolevGridFn, j: int, alpha: float) -> float:
    """sqrt(sum_{k<=j} int |D^k g|^2 (1 + |x|^2)^(-alpha) dx) on the grid."""
    if not 0 <= j <= 4:
        raise UnsupportedError(f"derivative order must lie in [0, 4], got {j}")
    weight = sobolev_weight(g.grid, alpha)
    peak = float(np.max(np.abs(g.values)))
    if peak == 0.0:
        return 0.0
    edge = max(abs(g.values[0]), abs(g.values[-1]))
    if edge >= 1e-6 * peak:
        raise TruncationDomainError(
            "function does not decay at the grid boundary",
            context={"edge": edge, "peak": peak, "L": g.half_width},
        )
    derivative = g.values
    total = trapezoid(derivative**2 * weight, dx=g.spacing)
    for _ in range(j):
        derivative = np.gradient(derivative, g.spacing, edge_order=2)
        total += trapezoid(derivative**2 * weight, dx=g.spacing)
    return math.sqrt(total)
