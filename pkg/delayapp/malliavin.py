"""Finite-difference Malliavin derivatives on the increment grid and the Clark–Ocone check."""

import dataclasses
import logging

import numpy as np

from .conf import toolkit_setting
from .exceptions import check_finite
from .regression import FeatureCache, conditional_expectation
from .sdde import simulate

logger = logging.getLogger(__name__)


def terminal_brownian(w):
    """F = W(T)."""
    return w.increments.sum(axis=1)


def terminal_brownian_squared(w):
    """F = W(T)²."""
    return w.increments.sum(axis=1) ** 2


@dataclasses.dataclass(frozen=True)
class TerminalState:
    """F = x_i(T) of the system driven by control u on the given noise."""

    sys: object
    u: object
    component: int = 0

    def __call__(self, w):
        return simulate(self.sys, self.u, w).x[:, -1, self.component]


@dataclasses.dataclass(frozen=True, eq=False)
class MalliavinSample:
    r: float
    index: int
    derivative: np.ndarray
    eps: float


def default_eps(grid):
    return float(np.sqrt(grid.dt) / 10)


def malliavin_fd(F, r, w, eps=None):
    """Central difference of F under ΔW_{index(r)} -> ΔW ± ε, divided by 2ε."""
    eps = default_eps(w.grid) if eps is None else eps
    if eps <= 0:
        raise ValueError(f'bump eps must be positive, got {eps}')
    index = w.grid.index(r)
    if not 0 <= index < w.grid.n_steps:
        raise ValueError(f'r={r} has no increment on the grid')
    up = np.asarray(F(w.bumped(index, eps)), dtype=float)
    down = np.asarray(F(w.bumped(index, -eps)), dtype=float)
    derivative = check_finite((up - down) / (2 * eps), 'Malliavin derivative')
    return MalliavinSample(r=float(r), index=index, derivative=derivative, eps=float(eps))


def malliavin_gradient(F, w, eps=None):
    """D_{t_k}F for every k, shape (paths, N), bumping one writable copy of the increments."""
    eps = default_eps(w.grid) if eps is None else eps
    scratch = np.array(w.increments)
    bumped = dataclasses.replace(w, increments=scratch)
    out = np.empty((w.n_paths, w.grid.n_steps))
    for k in range(w.grid.n_steps):
        scratch[:, k] = w.increments[:, k] + eps
        up = np.asarray(F(bumped), dtype=float)
        scratch[:, k] = w.increments[:, k] - eps
        down = np.asarray(F(bumped), dtype=float)
        scratch[:, k] = w.increments[:, k]
        out[:, k] = (up - down) / (2 * eps)
    return check_finite(out, 'Malliavin derivative')


@dataclasses.dataclass(frozen=True)
class ClarkOconeReport:
    mean: float
    relative_error: float
    isometry_lhs: float
    isometry_lhs_std_err: float
    variance: float
    variance_std_err: float
    sigmas: float

    @property
    def isometry_gap(self):
        return abs(self.isometry_lhs - self.variance)

    @property
    def isometry_passed(self):
        return self.isometry_gap <= self.sigmas * np.hypot(self.isometry_lhs_std_err,
                                                           self.variance_std_err)


def clark_ocone_check(F, w, traj=None, degree=None, eps=None, sigmas=None):
    """Rebuild F as E[F] + Σ_k E[D_{t_k}F | F_k] ΔW_k and compare.

    Reports the relative L² error of the rebuild and both sides of the
    isometry E Σ_k E[D_{t_k}F | F_k]² dt = Var F.
    """
    sigmas = toolkit_setting('ACCEPT_SIGMAS') if sigmas is None else sigmas
    grid = w.grid
    values = np.asarray(F(w), dtype=float)
    gradient = malliavin_gradient(F, w, eps)
    features = FeatureCache(w, traj)
    integrand = np.empty_like(gradient)
    for k in range(grid.n_steps):
        integrand[:, k], _ = conditional_expectation(features(k), gradient[:, k], degree)

    mean = float(values.mean())
    rebuilt = mean + np.sum(integrand * w.increments, axis=1)
    relative_error = float(np.sqrt(np.mean((rebuilt - values) ** 2) / np.mean(values ** 2)))

    energy = np.sum(integrand ** 2, axis=1) * grid.dt
    centred = values - mean
    variance = float(np.mean(centred ** 2))
    fourth = float(np.mean(centred ** 4))
    report = ClarkOconeReport(
        mean=mean,
        relative_error=relative_error,
        isometry_lhs=float(energy.mean()),
        isometry_lhs_std_err=float(energy.std(ddof=1) / np.sqrt(energy.size)),
        variance=variance,
        variance_std_err=float(np.sqrt(max(fourth - variance ** 2, 0.0) / values.size)),
        sigmas=sigmas,
    )
    logger.info('Clark-Ocone: relative error %.3g, isometry %.4g vs %.4g', relative_error,
                report.isometry_lhs, report.variance)
    return report
