"""Replayable Brownian drivers and the Euler-Maruyama step.

Every stream is a Philox counter-based generator keyed by
(base_seed, replication, stream path). Particle i of replication r always
sees the same uniforms regardless of how many particles are generated, so a
population of size n is a prefix of any larger population.
"""

import logging
import math
import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import TYPE_CHECKING, Sequence, Tuple, Union

import numpy as np
from scipy.special import ndtri

from .exceptions import BundleConstructionError, DimensionMismatchError, NumericError

if TYPE_CHECKING:
    from .model_lq import ModelParams

logger = logging.getLogger(__name__)

BUNDLE_MAGIC = b"MFGB1"
_HEADER = struct.Struct("<5sQQII d")

PARTICLE_STREAM = 0
COMMON_STREAM = 1
ORACLE_STREAM = 2
SAMPLE_STREAM = 3

# uniforms from Generator.random lie on k * 2^-53; the half-step offset keeps
# them strictly inside (0, 1) so the inverse CDF stays finite
_OPEN_INTERVAL_SHIFT = 2.0**-54


@dataclass(frozen=True)
class SeedRecord:
    base_seed: int
    replication_id: int


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid 0 = t_0 < ... < t_n_steps = T."""

    horizon: float
    n_steps: int

    def __post_init__(self):
        if self.n_steps < 1 or not self.horizon > 0.0:
            raise BundleConstructionError(
                "time grid needs n_steps >= 1 and T > 0",
                context={"n_steps": self.n_steps, "T": self.horizon},
            )

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    @cached_property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.n_steps + 1)

    def index_of(self, t: float) -> int:
        """Grid index of a time that must sit on the grid."""
        position = t / self.dt
        index = int(round(position))
        if abs(position - index) > 1e-9 or not 0 <= index <= self.n_steps:
            raise DimensionMismatchError(
                f"time {t} is not a grid time", context={"dt": self.dt}
            )
        return index


def stream_uniforms(
    base_seed: int, replication_id: int, path: Sequence[int], size: int
) -> np.ndarray:
    """Uniforms in (0, 1) from the Philox stream keyed by (seed, replication, path)."""
    seq = np.random.SeedSequence(
        entropy=int(base_seed), spawn_key=(int(replication_id),) + tuple(int(k) for k in path)
    )
    key = seq.generate_state(2, dtype=np.uint64)
    generator = np.random.Generator(np.random.Philox(key=key))
    return generator.random(size) + _OPEN_INTERVAL_SHIFT


def stream_normals(
    base_seed: int, replication_id: int, path: Sequence[int], size: Union[int, Tuple[int, ...]]
) -> np.ndarray:
    """Standard normals by inverse CDF, one per counter draw."""
    count = int(np.prod(size))
    return ndtri(stream_uniforms(base_seed, replication_id, path, count)).reshape(size)


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class BrownianBundle:
    """Idiosyncratic and common Brownian increments of one replication.

    `initial_uniform[i]` is the first draw of particle i's stream; it fixes
    X_0^i through the inverse CDF of mu_0, shared by every coupled system.
    """

    grid: TimeGrid
    idio: np.ndarray
    common: np.ndarray
    initial_uniform: np.ndarray
    seed_record: SeedRecord

    @property
    def dt(self) -> float:
        return self.grid.dt

    @property
    def n_steps(self) -> int:
        return self.grid.n_steps

    @property
    def n_particles(self) -> int:
        return self.idio.shape[1]

    @cached_property
    def w_path(self) -> np.ndarray:
        """W at grid times, W_0 = 0."""
        return _frozen(np.concatenate(([0.0], np.cumsum(self.common))))

    @cached_property
    def b_paths(self) -> np.ndarray:
        """B^i at grid times, shape [n_steps + 1, n_particles]."""
        zeros = np.zeros((1, self.n_particles))
        return _frozen(np.concatenate((zeros, np.cumsum(self.idio, axis=0)), axis=0))

    def prefix(self, n: int) -> "BrownianBundle":
        """Bundle restricted to particles 0..n-1; shares the common array."""
        if not 1 <= n <= self.n_particles:
            raise DimensionMismatchError(
                f"prefix size {n} outside [1, {self.n_particles}]"
            )
        return BrownianBundle(
            self.grid,
            _frozen(self.idio[:, :n]),
            self.common,
            _frozen(self.initial_uniform[:n]),
            self.seed_record,
        )

    def coarsen(self, factor: int) -> "BrownianBundle":
        """Sum consecutive increments: the same Brownian paths on a coarser grid."""
        if factor < 1 or self.n_steps % factor:
            raise DimensionMismatchError(
                f"cannot coarsen {self.n_steps} steps by {factor}"
            )
        steps = self.n_steps // factor
        idio = self.idio.reshape(steps, factor, self.n_particles).sum(axis=1)
        common = self.common.reshape(steps, factor).sum(axis=1)
        return BrownianBundle(
            TimeGrid(self.grid.horizon, steps),
            _frozen(idio),
            _frozen(common),
            self.initial_uniform,
            self.seed_record,
        )


def make_bundle(
    base_seed: int, replication_id: int, grid: TimeGrid, n_particles: int
) -> BrownianBundle:
    """Generate the drivers of one replication."""
    if n_particles < 1:
        raise BundleConstructionError(
            "bundle needs at least one particle", context={"n_particles": n_particles}
        )
    if grid.n_steps < 1:
        raise BundleConstructionError("bundle needs at least one step")

    scale = math.sqrt(grid.dt)
    idio = np.empty((grid.n_steps, n_particles))
    initial = np.empty(n_particles)
    for i in range(n_particles):
        uniforms = stream_uniforms(
            base_seed, replication_id, (PARTICLE_STREAM, i), grid.n_steps + 1
        )
        initial[i] = uniforms[0]
        idio[:, i] = scale * ndtri(uniforms[1:])
    common = scale * stream_normals(base_seed, replication_id, (COMMON_STREAM,), grid.n_steps)

    logger.debug(
        "Built bundle seed=%s replication=%s n=%s steps=%s",
        base_seed,
        replication_id,
        n_particles,
        grid.n_steps,
    )
    return BrownianBundle(
        grid,
        _frozen(idio),
        _frozen(common),
        _frozen(initial),
        SeedRecord(int(base_seed), int(replication_id)),
    )


def euler_step(x, drift, dB, dW, p: "ModelParams", dt: float):
    """x + drift dt + sigma dB + sigma0 dW; works elementwise on arrays."""
    result = x + drift * dt + p.sigma * dB + p.sigma0 * dW
    if not np.all(np.isfinite(result)):
        bad = np.flatnonzero(~np.isfinite(np.atleast_1d(result)))
        raise NumericError(
            "non-finite value in Euler step", context={"particle": int(bad[0])}
        )
    return result


def dump_bundle(bundle: BrownianBundle, path: Union[str, Path]) -> None:
    """Binary dump: header then row-major little-endian f64 arrays."""
    header = _HEADER.pack(
        BUNDLE_MAGIC,
        bundle.seed_record.base_seed,
        bundle.seed_record.replication_id,
        bundle.n_steps,
        bundle.n_particles,
        bundle.dt,
    )
    with open(path, "wb") as f:
        f.write(header)
        for array in (bundle.idio, bundle.common, bundle.initial_uniform):
            f.write(np.ascontiguousarray(array, dtype="<f8").tobytes())


def load_bundle(path: Union[str, Path]) -> BrownianBundle:
    with open(path, "rb") as f:
        raw = f.read()
    magic, seed, replication, n_steps, n_particles, dt = _HEADER.unpack_from(raw, 0)
    if magic != BUNDLE_MAGIC:
        raise BundleConstructionError("not a bundle file", context={"magic": magic})
    offset = _HEADER.size
    arrays = []
    for count in (n_steps * n_particles, n_steps, n_particles):
        arrays.append(np.frombuffer(raw, dtype="<f8", count=count, offset=offset).copy())
        offset += 8 * count
    idio, common, initial = arrays
    return BrownianBundle(
        TimeGrid(dt * n_steps, n_steps),
        _frozen(idio.reshape(n_steps, n_particles)),
        _frozen(common),
        _frozen(initial),
        SeedRecord(seed, replication),
    )
