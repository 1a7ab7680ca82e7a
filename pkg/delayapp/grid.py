"""Uniform time grids, seeded Brownian ensembles and common-random-number pairing."""

import dataclasses
import logging

import numpy as np

from .conf import toolkit_setting
from .exceptions import InvalidHorizon, NonCommensurateDelay

logger = logging.getLogger(__name__)


@dataclasses.dataclass(frozen=True)
class TimeGrid:
    t0: float
    T: float
    n_steps: int
    dt: float
    delay_steps: int

    @property
    def delta(self):
        return self.delay_steps * self.dt

    @property
    def times(self):
        return self.t0 + self.dt * np.arange(self.n_steps + 1)

    def time(self, k):
        return self.t0 + k * self.dt

    def index(self, t):
        """Grid index of time t; t must lie on the grid."""
        k = int(round((t - self.t0) / self.dt))
        if abs(self.time(k) - t) > 1e-9 * max(1.0, abs(self.T - self.t0)):
            raise ValueError(f'time {t} is not a grid point')
        return k


def make_grid(t0, T, n_steps, delta):
    if not T > t0:
        raise InvalidHorizon(f'horizon must satisfy T > t0, got t0={t0}, T={T}')
    if n_steps < 1:
        raise InvalidHorizon(f'n_steps must be at least 1, got {n_steps}')
    if delta < 0:
        raise NonCommensurateDelay(f'delay must be non-negative, got {delta}')
    dt = (T - t0) / n_steps
    delay_steps = int(round(delta / dt))
    if abs(delta - delay_steps * dt) > 1e-12 * (T - t0):
        raise NonCommensurateDelay(
            f'delay {delta} is not an integer multiple of dt={dt}'
        )
    return TimeGrid(t0=float(t0), T=float(T), n_steps=int(n_steps), dt=dt,
                    delay_steps=delay_steps)


@dataclasses.dataclass(frozen=True, eq=False)
class BrownianEnsemble:
    grid: TimeGrid
    n_paths: int
    increments: np.ndarray
    seed: int

    def paths(self):
        """W(t_k) per path, shape (n_paths, n_steps + 1), W(t0) = 0."""
        w = np.zeros((self.n_paths, self.grid.n_steps + 1))
        np.cumsum(self.increments, axis=1, out=w[:, 1:])
        return w

    def with_increments(self, increments):
        increments = np.array(increments, dtype=float)
        increments.setflags(write=False)
        return dataclasses.replace(self, increments=increments)

    def bumped(self, index, eps):
        """Copy with ΔW_index shifted by eps on every path."""
        increments = self.increments.copy()
        increments[:, index] += eps
        return self.with_increments(increments)


def sample_brownian(grid, n_paths, seed):
    if n_paths < 1:
        raise ValueError(f'n_paths must be at least 1, got {n_paths}')
    block = int(toolkit_setting('PATH_BLOCK'))
    n_blocks = -(-n_paths // block)
    # one child stream per block of paths, so blocks can be drawn in any order
    children = np.random.SeedSequence(int(seed)).spawn(n_blocks)
    scale = np.sqrt(grid.dt)
    increments = np.empty((n_paths, grid.n_steps))
    for b, child in enumerate(children):
        start = b * block
        stop = min(start + block, n_paths)
        rng = np.random.default_rng(child)
        increments[start:stop] = scale * rng.standard_normal((stop - start, grid.n_steps))
    increments.setflags(write=False)
    logger.debug('sampled %d paths x %d steps (seed=%d)', n_paths, grid.n_steps, seed)
    return BrownianEnsemble(grid=grid, n_paths=int(n_paths), increments=increments,
                            seed=int(seed))


def paired_ensembles(base):
    """Second handle on the same noise, for costing two controls side by side."""
    return dataclasses.replace(base)
