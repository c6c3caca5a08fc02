"""Nash, McKean-Vlasov proxy and conditionally i.i.d. particle systems.

All systems are Euler discretisations driven by one BrownianBundle: the same
initial uniforms, idiosyncratic increments and common increments, so paths
of different systems are coupled particle by particle.
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, NamedTuple, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .exceptions import DimensionMismatchError, NumericError
from .model_lq import ModelParams, drift_rate_mkv, drift_rate_nash
from .stochastic_kernel import BrownianBundle, SeedRecord, TimeGrid, euler_step

logger = logging.getLogger(__name__)

FEATURE_ORDERS = {"mean": 1, "m2": 2, "m3": 3, "m4": 4}

# reference state used to check a drift's Lipschitz behaviour at construction
_CHECK_FEATURES = {"mean": 0.0, "m2": 1.0, "m3": 0.0, "m4": 3.0}
_CHECK_STEP = 1e-4


@dataclass(frozen=True)
class ParticlePaths:
    """Trajectories of one n-particle system, shape [n_steps + 1, n]."""

    grid: TimeGrid
    states: np.ndarray
    system_tag: str
    seed_record: SeedRecord

    @property
    def n_particles(self) -> int:
        return self.states.shape[1]

    def at(self, t: float) -> np.ndarray:
        return self.states[self.grid.index_of(t)]

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def mean_path(self) -> np.ndarray:
        return np.array([empirical_mean(row) for row in self.states])

    def sup_norms(self) -> np.ndarray:
        """Grid-sup |X^i| per particle."""
        return np.max(np.abs(self.states), axis=0)


class CoupledTriple(NamedTuple):
    nash: ParticlePaths
    mkv: ParticlePaths
    hat: ParticlePaths


def empirical_mean(x: np.ndarray) -> float:
    """Pairwise-summed mean; fixed reduction order for a given n."""
    return float(np.sum(x) / x.size)


def empirical_features(x: np.ndarray, names: Sequence[str]) -> Dict[str, float]:
    features = {}
    for name in names:
        order = FEATURE_ORDERS[name]
        features[name] = empirical_mean(x) if order == 1 else float(np.sum(x**order) / x.size)
    return features


@dataclass(frozen=True)
class MeanFieldDrift:
    """Drift b(t, x, features) reading declared empirical moments.

    Construction takes finite differences in x and in every feature on
    [-check_radius, check_radius]; slopes above `lipschitz_bound` are rejected.
    """

    fn: Callable[[float, np.ndarray, Dict[str, float]], np.ndarray]
    features: Tuple[str, ...] = ("mean",)
    lipschitz_bound: float = 1e3
    check_radius: float = 5.0
    name: str = "drift"

    def __post_init__(self):
        unknown = set(self.features) - set(FEATURE_ORDERS)
        if unknown:
            raise DimensionMismatchError(f"unknown drift features: {sorted(unknown)}")
        self._check_lipschitz()

    def _check_lipschitz(self) -> None:
        xs = np.linspace(-self.check_radius, self.check_radius, 21)
        base = {k: _CHECK_FEATURES[k] for k in self.features}
        value = np.asarray(self.fn(0.0, xs, base), dtype=float)
        slopes = [
            np.abs(np.asarray(self.fn(0.0, xs + _CHECK_STEP, base)) - value) / _CHECK_STEP
        ]
        for key in self.features:
            bumped = dict(base)
            bumped[key] += _CHECK_STEP
            slopes.append(
                np.abs(np.asarray(self.fn(0.0, xs, bumped)) - value) / _CHECK_STEP
            )
        worst = float(np.max(slopes))
        if not np.all(np.isfinite(value)) or not math.isfinite(worst):
            raise NumericError(f"drift {self.name} is not finite on the check grid")
        if worst > self.lipschitz_bound:
            raise NumericError(
                f"drift {self.name} exceeds Lipschitz bound",
                context={"slope": worst, "bound": self.lipschitz_bound},
            )

    def __call__(self, t: float, x: np.ndarray, features: Dict[str, float]) -> np.ndarray:
        return self.fn(t, x, features)


def lq_mean_field_drift(p: ModelParams, grid: TimeGrid) -> MeanFieldDrift:
    """LQ drift c(t)(mean - x); rates precomputed on the grid like the proxy."""
    rates = np.asarray(drift_rate_mkv(grid.times, p))

    def fn(t, x, features):
        return rates[grid.index_of(t)] * (features["mean"] - x)

    return MeanFieldDrift(fn, ("mean",), lipschitz_bound=10.0 * float(np.max(np.abs(rates))) + 1.0, name="lq")


def tanh_mean_drift() -> MeanFieldDrift:
    """b(x, m) = tanh(mean(m) - x)."""
    return MeanFieldDrift(lambda t, x, f: np.tanh(f["mean"] - x), ("mean",), name="tanh")


def initial_states(p: ModelParams, bundle: BrownianBundle) -> np.ndarray:
    return p.mu0.quantile(bundle.initial_uniform)


def _check_dims(n: int, bundle: BrownianBundle) -> None:
    if n != bundle.n_particles:
        raise DimensionMismatchError(
            f"bundle carries {bundle.n_particles} particles, system needs {n}",
            context={"n": n, "bundle_particles": bundle.n_particles},
        )


def _step(x, drift, bundle, j, p):
    try:
        return euler_step(x, drift, bundle.idio[j], bundle.common[j], p, bundle.dt)
    except NumericError as e:
        raise NumericError(str(e), context={**e.context, "step": j}) from e


def _interacting(p: ModelParams, bundle: BrownianBundle, rates: np.ndarray, tag: str) -> ParticlePaths:
    states = np.empty((bundle.n_steps + 1, bundle.n_particles))
    x = initial_states(p, bundle)
    states[0] = x
    for j in range(bundle.n_steps):
        drift = rates[j] * (empirical_mean(x) - x)
        x = _step(x, drift, bundle, j, p)
        states[j + 1] = x
    return ParticlePaths(bundle.grid, states, tag, bundle.seed_record)


def simulate_nash(p: ModelParams, n: int, bundle: BrownianBundle) -> ParticlePaths:
    """Closed-loop Nash equilibrium dynamics with rate c_n(t)."""
    _check_dims(n, bundle)
    rates = np.asarray(drift_rate_nash(bundle.grid.times, n, p))
    return _interacting(p, bundle, rates, "nash")


def simulate_mkv_proxy(p: ModelParams, n: int, bundle: BrownianBundle) -> ParticlePaths:
    """n-particle system driven by the master-equation feedback, rate c(t)."""
    _check_dims(n, bundle)
    rates = np.asarray(drift_rate_mkv(bundle.grid.times, p))
    return _interacting(p, bundle, rates, "mkv")


def conditional_mean_path(w_path: np.ndarray, p: ModelParams) -> np.ndarray:
    """mean(mu_t) = mean(mu_0) + sigma0 W_t."""
    return p.mu0.mean + p.sigma0 * np.asarray(w_path)


def simulate_hat(
    p: ModelParams, n: int, bundle: BrownianBundle, w_path: np.ndarray
) -> ParticlePaths:
    """Particles attracted to the exact conditional mean; independent given W."""
    _check_dims(n, bundle)
    w_path = np.asarray(w_path, dtype=float)
    if w_path.shape != (bundle.n_steps + 1,) or not np.allclose(
        np.diff(w_path), bundle.common, rtol=0.0, atol=1e-12
    ):
        raise DimensionMismatchError("w_path is not the common noise of this bundle")
    rates = np.asarray(drift_rate_mkv(bundle.grid.times, p))
    targets = conditional_mean_path(w_path, p)

    states = np.empty((bundle.n_steps + 1, n))
    x = initial_states(p, bundle)
    states[0] = x
    for j in range(bundle.n_steps):
        x = _step(x, rates[j] * (targets[j] - x), bundle, j, p)
        states[j + 1] = x
    return ParticlePaths(bundle.grid, states, "hat", bundle.seed_record)


def simulate_generic_mkv(
    drift: MeanFieldDrift, p: ModelParams, n: int, bundle: BrownianBundle
) -> ParticlePaths:
    """Euler paths for an arbitrary mean-field drift of empirical moments."""
    _check_dims(n, bundle)
    times = bundle.grid.times
    states = np.empty((bundle.n_steps + 1, n))
    x = initial_states(p, bundle)
    states[0] = x
    for j in range(bundle.n_steps):
        features = empirical_features(x, drift.features)
        values = np.asarray(drift(times[j], x, features), dtype=float)
        if not np.all(np.isfinite(values)):
            bad = int(np.flatnonzero(~np.isfinite(np.broadcast_to(values, x.shape)))[0])
            raise NumericError(
                f"drift {drift.name} returned a non-finite value",
                context={"step": j, "particle": bad},
            )
        x = _step(x, values, bundle, j, p)
        states[j + 1] = x
    return ParticlePaths(bundle.grid, states, "generic", bundle.seed_record)


def simulate_coupled_triple(p: ModelParams, n: int, bundle: BrownianBundle) -> CoupledTriple:
    """Nash, proxy and hat systems on one bundle."""
    return CoupledTriple(
        simulate_nash(p, n, bundle),
        simulate_mkv_proxy(p, n, bundle),
        simulate_hat(p, n, bundle, bundle.w_path),
    )


@dataclass
class StrongOrderStudy:
    dts: np.ndarray
    errors: np.ndarray
    slope: float
    reference_dt: float = field(default=0.0)


def strong_order_study(
    p: ModelParams,
    n: int,
    bundle: BrownianBundle,
    factors: Sequence[int] = (4, 8, 16),
    simulate: Callable[[ModelParams, int, BrownianBundle], ParticlePaths] = simulate_nash,
) -> StrongOrderStudy:
    """Mean grid-sup error of coarsened runs against the bundle's own resolution."""
    reference = simulate(p, n, bundle)
    dts, errors = [], []
    for factor in factors:
        coarse = simulate(p, n, bundle.coarsen(factor))
        fine_on_coarse = reference.states[::factor]
        errors.append(float(np.mean(np.max(np.abs(coarse.states - fine_on_coarse), axis=0))))
        dts.append(coarse.grid.dt)
    dts, errors = np.array(dts), np.array(errors)
    slope = float(np.polyfit(np.log(dts), np.log(errors), 1)[0])
    logger.info("Strong-order study: dts=%s errors=%s slope=%.3f", dts, errors, slope)
    return StrongOrderStudy(dts, errors, slope, bundle.dt)


def dump_paths_csv(triple: CoupledTriple, path: Union[str, Path]) -> None:
    """Long-format CSV: step, time, particle, x_nash, x_mkv, x_hat."""
    grid = triple.nash.grid
    steps, particles = np.meshgrid(
        np.arange(grid.n_steps + 1), np.arange(triple.nash.n_particles), indexing="ij"
    )
    frame = pd.DataFrame(
        {
            "step": steps.ravel(),
            "time": grid.times[steps.ravel()],
            "particle": particles.ravel(),
            "x_nash": triple.nash.states.ravel(),
            "x_mkv": triple.mkv.states.ravel(),
            "x_hat": triple.hat.states.ravel(),
        }
    )
    frame.to_csv(path, index=False, float_format="%.17g")
