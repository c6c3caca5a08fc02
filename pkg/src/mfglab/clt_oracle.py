"""Gaussian limit of the fluctuation field restricted to monomial test functions.

In the LQ model the limiting equation tested against x^k closes on the
vector s = (<S_t, x^k>)_{k<=K}: a linear SDE whose coefficients involve
the moments of mu_t. Integrating it gives an oracle for the law of the
finite-n fluctuations, independent of any particle simulation.
"""

import logging
import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import List, NamedTuple, Optional, Sequence, Union

import numpy as np
from scipy.stats import chi2, ks_2samp, norm

from ..config import config
from ..utils.parallel import blocks, map_replications
from ..utils.retry import jitter_retry
from .exceptions import (
    ComparisonRefusedError,
    CovarianceError,
    DimensionMismatchError,
    UnsupportedError,
)
from .fluctuation_field import FluctuationSample
from .model_lq import (
    ModelParams,
    centered_moments,
    drift_rate_mkv,
    mu_t_explicit,
    raw_moments_from_centered,
)
from .models import ComparisonReport, ComparisonRow
from .stochastic_kernel import COMMON_STREAM, ORACLE_STREAM, TimeGrid, stream_normals

logger = logging.getLogger(__name__)

MAX_ORACLE_DEGREE = 6
MIN_COMPARISON_SIZE = 200
BLOCK_SIZE = 256

_THETA_STREAM = 0
_XI_STREAM = 2


class DriftConvention(str, Enum):
    """Sign of the interaction bracket in the moment drift."""

    DERIVED = "derived"
    PRINTED = "printed"


@dataclass(frozen=True)
class MomentSystemState:
    """s[k] = <S_t, x^k> for k = 0..K and the realised moments of mu_t."""

    K: int
    s: np.ndarray
    t: float
    mu_moments: np.ndarray

    def __post_init__(self):
        if not 1 <= self.K <= MAX_ORACLE_DEGREE:
            raise UnsupportedError(f"K must lie in [1, {MAX_ORACLE_DEGREE}]")
        if self.s.shape != (self.K + 1,):
            raise DimensionMismatchError("state vector must have K + 1 entries")
        if self.mu_moments.shape[-1] < max(2 * self.K - 1, 2):
            raise DimensionMismatchError("mu_moments must reach degree 2K - 2")

    @classmethod
    def initial(
        cls, K: int, s0: np.ndarray, p: ModelParams, w_t: float = 0.0, t: float = 0.0
    ) -> "MomentSystemState":
        law = mu_t_explicit(t, w_t, p)
        s = np.asarray(s0, dtype=float).copy()
        s[0] = 0.0
        return cls(K, s, t, law.moments(_moment_order(K)))


def _moment_order(K: int) -> int:
    return max(2 * K - 2, 1)


def _check_degree(K: int) -> None:
    if not 1 <= K <= MAX_ORACLE_DEGREE:
        raise UnsupportedError(
            f"moment system degree must lie in [1, {MAX_ORACLE_DEGREE}], got {K}"
        )


@jitter_retry()
def _unit_cholesky(matrix: np.ndarray) -> np.ndarray:
    return np.linalg.cholesky(matrix)


def covariance_factor(matrix: np.ndarray) -> np.ndarray:
    """Lower factor L with L L^T = matrix for a PSD matrix or a stack of them.

    The factorisation runs on the unit-diagonal correlation form so that the
    jitter is relative; rows with a zero diagonal get a zero factor row.
    """
    matrix = np.asarray(matrix, dtype=float)
    diagonal = np.diagonal(matrix, axis1=-2, axis2=-1)
    if np.any(diagonal < 0.0) or not np.all(np.isfinite(matrix)):
        raise CovarianceError(
            "covariance has a negative or non-finite diagonal",
            context={"min_diagonal": float(np.min(diagonal))},
        )
    if not np.any(diagonal > 0.0):
        return np.zeros_like(matrix)
    scale = np.sqrt(diagonal)
    safe = np.where(scale > 0.0, scale, 1.0)
    correlation = matrix / (safe[..., :, None] * safe[..., None, :])
    idx = np.arange(matrix.shape[-1])
    correlation[..., idx, idx] = 1.0
    dead = scale == 0.0
    if np.any(dead):
        correlation = np.where(dead[..., :, None] | dead[..., None, :], 0.0, correlation)
        correlation[..., idx, idx] = 1.0
    return scale[..., :, None] * _unit_cholesky(correlation)


@dataclass(frozen=True)
class LimitCovarianceSpec:
    """Covariances of the initial fluctuation theta_0 and of the noise xi."""

    K: int
    sigma: float
    theta0_cov: np.ndarray

    @classmethod
    def for_params(cls, p: ModelParams, K: int) -> "LimitCovarianceSpec":
        """Centered theta_0 covariance m_{j+k} - m_j m_k of the monomials under mu_0."""
        _check_degree(K)
        m = p.mu0.mixture().moments(2 * K)
        j, k = np.meshgrid(np.arange(K + 1), np.arange(K + 1), indexing="ij")
        cov = m[j + k] - m[j] * m[k]
        cov[0, :] = 0.0
        cov[:, 0] = 0.0
        return cls(K, p.sigma, cov)

    def xi_rate_matrix(self, mu_moments: np.ndarray) -> np.ndarray:
        """sigma^2 j k M_{j+k-2}, zero in row and column 0; broadcasts over leading axes."""
        mu_moments = np.asarray(mu_moments, dtype=float)
        K = self.K
        j, k = np.meshgrid(np.arange(1, K + 1), np.arange(1, K + 1), indexing="ij")
        rates = np.zeros(mu_moments.shape[:-1] + (K + 1, K + 1))
        rates[..., 1:, 1:] = self.sigma**2 * (j * k) * mu_moments[..., j + k - 2]
        return rates

    def xi_rate(self, j: int, k: int, t: float, p: ModelParams, w_t: float = 0.0) -> float:
        """Rate of d<xi(x^j), xi(x^k)>_t given W_t = w_t."""
        if j == 0 or k == 0:
            return 0.0
        law = mu_t_explicit(t, w_t, p)
        return self.sigma**2 * j * k * law.moment(j + k - 2)


def moment_drift(
    s: np.ndarray,
    rate: Union[float, np.ndarray],
    mu_moments: np.ndarray,
    p: ModelParams,
    convention: DriftConvention = DriftConvention.DERIVED,
) -> np.ndarray:
    """c[k mbar s_{k-1} - k s_k + k M_{k-1} s_1] + (sigma^2 + sigma0^2) k(k-1)/2 s_{k-2}.

    The printed convention flips the sign of the bracket.
    """
    K = s.shape[-1] - 1
    k = np.arange(1, K + 1)
    mean = mu_moments[..., 1:2]
    bracket = k * mean * s[..., :-1] - k * s[..., 1:] + k * mu_moments[..., :K] * s[..., 1:2]
    if DriftConvention(convention) is DriftConvention.PRINTED:
        bracket = -bracket
    drift = np.zeros_like(s)
    drift[..., 1:] = np.asarray(rate)[..., None] * bracket
    if K >= 2:
        curvature = 0.5 * (p.sigma**2 + p.sigma0**2) * k[1:] * (k[1:] - 1)
        drift[..., 2:] += curvature * s[..., : K - 1]
    return drift


def _common_noise_term(s: np.ndarray, p: ModelParams) -> np.ndarray:
    K = s.shape[-1] - 1
    term = np.zeros_like(s)
    term[..., 1:] = p.sigma0 * np.arange(1, K + 1) * s[..., :-1]
    return term


def limit_moment_step(
    state: MomentSystemState,
    dW: float,
    dXi: np.ndarray,
    dt: float,
    p: ModelParams,
    convention: DriftConvention = DriftConvention.DERIVED,
) -> MomentSystemState:
    """One Euler step of the closed moment system."""
    dXi = np.asarray(dXi, dtype=float)
    if dXi.shape != state.s.shape:
        raise DimensionMismatchError("dXi must have K + 1 entries")
    rate = drift_rate_mkv(state.t, p)
    drift = moment_drift(state.s, rate, state.mu_moments, p, convention)
    s = state.s + drift * dt + _common_noise_term(state.s, p) * dW + dXi
    s[0] = 0.0

    t = min(state.t + dt, p.horizon)
    mean = state.mu_moments[1] + p.sigma0 * dW
    centered = centered_moments(t, p, _moment_order(state.K))
    mu_moments = raw_moments_from_centered(centered, mean)
    return replace(state, s=s, t=t, mu_moments=np.asarray(mu_moments))


def centered_moment_table(p: ModelParams, grid: TimeGrid, order: int) -> np.ndarray:
    """Centered moments of mu_t on every grid time, shape [n_steps + 1, order + 1]."""
    return np.array([centered_moments(float(t), p, order) for t in grid.times])


def integrate_moment_system(
    initial: np.ndarray,
    dw: np.ndarray,
    xi_normals: np.ndarray,
    p: ModelParams,
    grid: TimeGrid,
    record: Sequence[int],
    convention: DriftConvention = DriftConvention.DERIVED,
    table: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Integrate a batch of moment systems driven by given noises.

    initial: [B, K + 1]; dw: [B, n_steps] common increments; xi_normals:
    [B, n_steps, K + 1] standard normals coloured by the xi rate. Returns
    the states at the `record` grid indices, shape [B, len(record), K + 1].
    The map from (initial, xi_normals) to the output is linear for fixed dw.
    """
    initial = np.asarray(initial, dtype=float)
    batch, width = initial.shape
    K = width - 1
    _check_degree(K)
    if dw.shape != (batch, grid.n_steps) or xi_normals.shape != (batch, grid.n_steps, width):
        raise DimensionMismatchError(
            "noise arrays do not match the batch and grid",
            context={"dw": dw.shape, "xi": xi_normals.shape, "batch": batch},
        )
    order = _moment_order(K)
    if table is None:
        table = centered_moment_table(p, grid, order)
    spec = LimitCovarianceSpec(K, p.sigma, np.zeros((width, width)))
    rates = np.asarray(drift_rate_mkv(grid.times, p))
    dt = grid.dt
    root_dt = math.sqrt(dt)

    positions = {index: a for a, index in enumerate(record)}
    out = np.zeros((batch, len(record), width))
    s = initial.copy()
    s[:, 0] = 0.0
    mean = np.full(batch, p.mu0.mean)
    if 0 in positions:
        out[:, positions[0]] = s

    for j in range(grid.n_steps):
        raw = raw_moments_from_centered(table[j], mean)
        drift = moment_drift(s, rates[j], raw, p, convention)
        if p.sigma > 0.0:
            factor = covariance_factor(spec.xi_rate_matrix(raw))
            noise = root_dt * np.einsum("bik,bk->bi", factor, xi_normals[:, j])
        else:
            noise = 0.0
        s = s + drift * dt + _common_noise_term(s, p) * dw[:, j, None] + noise
        s[:, 0] = 0.0
        mean = mean + p.sigma0 * dw[:, j]
        if j + 1 in positions:
            out[:, positions[j + 1]] = s
    return out


class LimitSamples(NamedTuple):
    """Oracle draws of (<S_t, x^k>) at the requested times and degrees."""

    times: np.ndarray
    degrees: List[int]
    values: np.ndarray
    convention: str


def _oracle_block(
    replications: range,
    p: ModelParams,
    K: int,
    grid: TimeGrid,
    seed: int,
    record: List[int],
    convention: str,
    table: np.ndarray,
) -> np.ndarray:
    spec = LimitCovarianceSpec.for_params(p, K)
    theta_factor = covariance_factor(spec.theta0_cov)
    root_dt = math.sqrt(grid.dt)
    width = K + 1
    initial = np.empty((len(replications), width))
    dw = np.empty((len(replications), grid.n_steps))
    xi = np.empty((len(replications), grid.n_steps, width))
    for b, r in enumerate(replications):
        initial[b] = theta_factor @ stream_normals(seed, r, (ORACLE_STREAM, _THETA_STREAM), width)
        dw[b] = root_dt * stream_normals(seed, r, (ORACLE_STREAM, COMMON_STREAM), grid.n_steps)
        xi[b] = stream_normals(seed, r, (ORACLE_STREAM, _XI_STREAM), (grid.n_steps, width))
    return integrate_moment_system(
        initial, dw, xi, p, grid, record, DriftConvention(convention), table
    )


def sample_limit_vector(
    testdegrees: Sequence[int],
    times: Sequence[float],
    M: int,
    seed: int,
    p: ModelParams,
    n_steps: Optional[int] = None,
    convention: DriftConvention = DriftConvention.DERIVED,
    threads: Optional[int] = None,
) -> LimitSamples:
    """Draw M independent replications of the limit vector.

    Replication r uses only its own counter streams, so the output does not
    depend on the block split or on the number of worker processes.
    """
    degrees = [int(k) for k in testdegrees]
    if not degrees or min(degrees) < 0:
        raise UnsupportedError("degrees must be non-negative")
    K = max(max(degrees), 1)
    _check_degree(K)
    grid = TimeGrid(p.horizon, n_steps or config.clt_dt_steps)
    record = [grid.index_of(float(t)) for t in times]
    convention = DriftConvention(convention)
    table = centered_moment_table(p, grid, _moment_order(K))

    logger.info(
        "Sampling %s oracle replications to degree %s on %s steps (%s drift)",
        M,
        K,
        grid.n_steps,
        convention.value,
    )
    parts = map_replications(
        _oracle_block,
        blocks(M, BLOCK_SIZE),
        p,
        K,
        grid,
        seed,
        record,
        convention.value,
        table,
        threads=threads,
    )
    states = np.concatenate(parts, axis=0) if parts else np.zeros((0, len(record), K + 1))
    return LimitSamples(np.asarray(times, dtype=float), degrees, states[:, :, degrees], convention.value)


def _monomial_columns(sample: FluctuationSample, degrees: Sequence[int]) -> List[int]:
    columns = []
    for k in degrees:
        matches = [
            b for b, phi in enumerate(sample.testfns) if phi.kind == "monomial" and phi.degree == k
        ]
        if not matches:
            raise DimensionMismatchError(f"fluctuation sample lacks the monomial x^{k}")
        columns.append(matches[0])
    return columns


def _as_array(
    samples: Union[LimitSamples, Sequence[FluctuationSample]],
    times: Sequence[float],
    degrees: Sequence[int],
) -> np.ndarray:
    """[M, times, degrees] view of either kind of sample."""
    times = np.asarray(times, dtype=float)
    if isinstance(samples, LimitSamples):
        if samples.times.shape != times.shape or not np.allclose(samples.times, times):
            raise DimensionMismatchError("oracle times differ from the requested times")
        try:
            columns = [samples.degrees.index(k) for k in degrees]
        except ValueError as e:
            raise DimensionMismatchError(f"oracle lacks a requested degree: {e}") from e
        return samples.values[:, :, columns]

    if not samples:
        return np.zeros((0, len(times), len(degrees)))
    first = samples[0]
    if first.times.shape != times.shape or not np.allclose(first.times, times):
        raise DimensionMismatchError("fluctuation times differ from the requested times")
    columns = _monomial_columns(first, degrees)
    return np.stack([sample.values[:, columns] for sample in samples])


def _relative_frobenius(observed: np.ndarray, reference: np.ndarray) -> float:
    norm_ref = float(np.linalg.norm(reference))
    gap = float(np.linalg.norm(observed - reference))
    if norm_ref == 0.0:
        return 0.0 if gap == 0.0 else math.inf
    return gap / norm_ref


def compare_distributions(
    empirical: Union[LimitSamples, Sequence[FluctuationSample]],
    oracle: Union[LimitSamples, Sequence[FluctuationSample]],
    times: Sequence[float],
    degrees: Sequence[int],
    cov_tolerance: Optional[float] = None,
    ks_level: Optional[float] = None,
    ks_pass_fraction: Optional[float] = None,
) -> ComparisonReport:
    """Per (time, degree) mean gap, covariance error and two-sample KS test.

    Passing needs every per-time covariance error within tolerance and the
    KS p-value above the level on the required share of non-constant marginals.
    """
    left = _as_array(empirical, times, degrees)
    right = _as_array(oracle, times, degrees)
    if left.shape[0] < MIN_COMPARISON_SIZE or right.shape[0] < MIN_COMPARISON_SIZE:
        raise ComparisonRefusedError(
            f"comparison needs at least {MIN_COMPARISON_SIZE} replications per side",
            context={"empirical": left.shape[0], "oracle": right.shape[0]},
        )
    cov_tolerance = cov_tolerance if cov_tolerance is not None else config.get_tolerance("covariance_rel")
    ks_level = ks_level if ks_level is not None else config.get_tolerance("ks_level")
    ks_pass_fraction = (
        ks_pass_fraction
        if ks_pass_fraction is not None
        else config.get_tolerance("ks_min_pass_fraction")
    )

    rows: List[ComparisonRow] = []
    cov_ok = True
    ks_results = []
    for a, t in enumerate(times):
        cov_err = _relative_frobenius(
            np.atleast_2d(np.cov(left[:, a, :], rowvar=False)),
            np.atleast_2d(np.cov(right[:, a, :], rowvar=False)),
        )
        cov_ok = cov_ok and cov_err <= cov_tolerance
        for b, k in enumerate(degrees):
            x, y = left[:, a, b], right[:, a, b]
            se = math.sqrt(np.var(x, ddof=1) / x.size + np.var(y, ddof=1) / y.size)
            result = ks_2samp(x, y)
            constant = np.ptp(x) == 0.0 and np.ptp(y) == 0.0
            if not constant:
                ks_results.append(result.pvalue > ks_level)
            rows.append(
                ComparisonRow(
                    time=float(t),
                    degree=int(k),
                    mean_diff=float(np.mean(x) - np.mean(y)),
                    mean_se=se,
                    cov_rel_err=cov_err,
                    var_rel_err=_relative_frobenius(
                        np.atleast_2d(np.var(x, ddof=1)), np.atleast_2d(np.var(y, ddof=1))
                    ),
                    ks_stat=float(result.statistic),
                    ks_p=float(result.pvalue),
                )
            )

    ks_ok = not ks_results or np.mean(ks_results) >= ks_pass_fraction
    passed = bool(cov_ok and ks_ok)
    if not passed:
        logger.warning(
            "Distribution comparison failed: covariance ok=%s, KS share=%.3f",
            cov_ok,
            float(np.mean(ks_results)) if ks_results else 1.0,
        )
    return ComparisonReport(
        rows=rows,
        passed=passed,
        n_empirical=left.shape[0],
        n_oracle=right.shape[0],
        cov_tolerance=cov_tolerance,
        ks_level=ks_level,
        ks_pass_fraction=ks_pass_fraction,
        convention=oracle.convention if isinstance(oracle, LimitSamples) else "empirical",
    )


class MardiaResult(NamedTuple):
    skewness: float
    skewness_p: float
    kurtosis: float
    kurtosis_p: float

    def rejected(self, level: float = 0.01) -> bool:
        return self.skewness_p < level or self.kurtosis_p < level


def mardia_test(samples: np.ndarray) -> MardiaResult:
    """Mardia's multivariate skewness and kurtosis tests on rows of `samples`.

    Constant columns are dropped before standardising.
    """
    x = np.asarray(samples, dtype=float)
    x = x[:, np.ptp(x, axis=0) > 0.0]
    count, d = x.shape
    if d == 0 or count <= d:
        raise UnsupportedError("Mardia test needs more rows than non-constant columns")
    centered = x - x.mean(axis=0)
    cov = centered.T @ centered / count
    gram = centered @ np.linalg.solve(cov, centered.T)
    skewness = float(np.mean(gram**3))
    kurtosis = float(np.mean(np.diag(gram) ** 2))

    skew_stat = count * skewness / 6.0
    skew_dof = d * (d + 1) * (d + 2) / 6.0
    kurt_z = (kurtosis - d * (d + 2)) / math.sqrt(8.0 * d * (d + 2) / count)
    return MardiaResult(
        skewness,
        float(chi2.sf(skew_stat, skew_dof)),
        kurtosis,
        float(2.0 * norm.sf(abs(kurt_z))),
    )
