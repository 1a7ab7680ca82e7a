"""Monte Carlo cost evaluation, Gateaux derivatives and the variational inequality."""

import dataclasses
import logging

import numpy as np

from .conf import toolkit_setting
from .exceptions import check_finite
from .sdde import simulate
from .system import ARGS, STATE_ARGS
from .variation import simulate_variational, variational_system

logger = logging.getLogger(__name__)

VARIATIONAL = 'analytic-variational'
FINITE_DIFFERENCE = 'finite-difference'


@dataclasses.dataclass(frozen=True)
class McEstimate:
    mean: float
    std_err: float
    n_paths: int
    seed: int

    @classmethod
    def from_samples(cls, samples, seed):
        samples = np.asarray(samples, dtype=float)
        if samples.size > 1:
            se = float(np.std(samples, ddof=1) / np.sqrt(samples.size))
        else:
            se = 0.0
        return cls(mean=float(np.mean(samples)), std_err=se, n_paths=int(samples.size),
                   seed=int(seed))

    def as_dict(self):
        return dataclasses.asdict(self)


def path_costs(sys, traj):
    """Σ_{k<N} l(t_k, …)dt + h(x_N, y_N, z_N, κ_N) per path."""
    grid = sys.grid
    total = np.zeros(traj.n_paths)
    if not getattr(sys.running_cost, 'is_zero', False):
        for k in range(grid.n_steps):
            total = total + sys.running_cost.value(grid.time(k), traj.args_at(k)) * grid.dt
    if not getattr(sys.terminal_cost, 'is_zero', False):
        total = total + sys.terminal_cost.value(grid.T, traj.terminal_args())
    return check_finite(total, 'path cost')


def evaluate_cost(sys, u, w):
    estimate = McEstimate.from_samples(path_costs(sys, simulate(sys, u, w)), w.seed)
    logger.debug('J = %.6g ± %.2g over %d paths', estimate.mean, estimate.std_err, w.n_paths)
    return estimate


@dataclasses.dataclass(frozen=True)
class GateauxEstimate:
    value: float
    std_err: float
    method: str
    rho_used: float | None
    n_paths: int


def variational_integrand(sys, lin, xhat):
    """Per-path directional derivative Σ_k <∂l, (x̂, ŷ, ẑ, κ̂, v, μ̂, ν̂, λ̂)> dt + <∂h, ·>."""
    grid = sys.grid
    total = np.zeros(xhat.n_paths)
    for k in range(grid.n_steps):
        args = xhat.args_at(k)
        for a in ARGS:
            total = total + np.sum(lin.running[a][:, k] * args[a], axis=-1) * grid.dt
    terminal = xhat.terminal_args()
    for a in STATE_ARGS:
        total = total + np.sum(lin.terminal[a] * terminal[a], axis=-1)
    return total


def cost_differences(sys, u, v, rho, w):
    """J(u + ρv) - J(u) per path on the ensemble's noise."""
    base = path_costs(sys, simulate(sys, u, w))
    moved = path_costs(sys, simulate(sys, u.perturbed(v, rho), w))
    return moved - base


def gateaux(sys, u_star, v, w, mode=VARIATIONAL, rho=1e-2):
    """d/dρ J(u* + ρv) at 0⁺.

    The finite-difference mode uses Richardson extrapolation 2D(ρ/2) - D(ρ)
    on paired noise to cancel the first-order bias.
    """
    if mode == VARIATIONAL:
        vs, _ = variational_system(sys, u_star, v, w)
        samples = variational_integrand(sys, vs.lin, simulate_variational(vs, w))
        rho_used = None
    elif mode == FINITE_DIFFERENCE:
        coarse = cost_differences(sys, u_star, v, rho, w) / rho
        fine = cost_differences(sys, u_star, v, rho / 2, w) / (rho / 2)
        samples = 2 * fine - coarse
        rho_used = rho
    else:
        raise ValueError(f'unknown gateaux mode {mode!r}')
    samples = check_finite(np.broadcast_to(samples, (w.n_paths,)), 'gateaux derivative')
    est = McEstimate.from_samples(samples, w.seed)
    return GateauxEstimate(value=est.mean, std_err=est.std_err, method=mode, rho_used=rho_used,
                           n_paths=w.n_paths)


@dataclasses.dataclass(frozen=True)
class InequalityEntry:
    index: int
    value: float
    std_err: float
    tolerance: float
    violated: bool


@dataclasses.dataclass(frozen=True)
class InequalityReport:
    entries: list

    @property
    def violations(self):
        return [e for e in self.entries if e.violated]

    @property
    def passed(self):
        return not self.violations


def variational_inequality_check(sys, u_star, directions, w, mode=VARIATIONAL,
                                 bias_budget=None, sigmas=None):
    """sign·gateaux(v) <= sigmas·std_err + bias_budget for every direction v."""
    sigmas = toolkit_setting('STAT_SIGMAS') if sigmas is None else sigmas
    bias_budget = sys.grid.dt if bias_budget is None else bias_budget
    entries = []
    for i, v in enumerate(directions):
        g = gateaux(sys, u_star, v, w, mode=mode)
        tolerance = sigmas * g.std_err + bias_budget
        entries.append(InequalityEntry(index=i, value=g.value, std_err=g.std_err,
                                       tolerance=tolerance,
                                       violated=bool(sys.sign * g.value > tolerance)))
    report = InequalityReport(entries=entries)
    logger.info('variational inequality: %d of %d directions violated',
                len(report.violations), len(entries))
    return report


def crn_variance_comparison(sys, u_a, u_b, w, w_independent):
    """Variance of J(u_b) - J(u_a) per path: paired noise against independent noise."""
    paired = path_costs(sys, simulate(sys, u_b, w)) - path_costs(sys, simulate(sys, u_a, w))
    independent = (path_costs(sys, simulate(sys, u_b, w_independent))
                   - path_costs(sys, simulate(sys, u_a, w)))
    var_paired = float(np.var(paired, ddof=1))
    var_independent = float(np.var(independent, ddof=1))
    ratio = var_independent / var_paired if var_paired > 0 else float('inf')
    return {'var_paired': var_paired, 'var_independent': var_independent, 'ratio': ratio}
