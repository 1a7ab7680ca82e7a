"""Backward solvers for the adjoint processes and the duality check."""

import csv
import dataclasses
import logging

import numpy as np

from .conf import toolkit_setting
from .exceptions import UnsupportedRegime, check_finite
from .kernels import build_e1, kernel_table
from .regression import FeatureCache, conditional_expectation, martingale_increment
from .sdde import simulate
from .system import STATE_ARGS
from .variation import (
    build_svie, delay_indicator, linearize, simulate_svie, variational_system,
)

logger = logging.getLogger(__name__)


@dataclasses.dataclass(frozen=True, eq=False)
class AdjointSolution:
    """p, q on the grid, shape (lead, N+1, n); lead is 1 on the deterministic path.

    eta, zeta, Y, Z are filled in by the Volterra solver: Y has 4n
    components per grid point and Z holds the band aggregate of Z(t, s)
    consumed by q.
    """

    grid: object
    p: np.ndarray
    q: np.ndarray
    deterministic: bool
    degree: int
    conditions: list = dataclasses.field(default_factory=list)
    eta: np.ndarray | None = None
    zeta: np.ndarray | None = None
    Y: np.ndarray | None = None
    Z: np.ndarray | None = None

    @property
    def max_condition(self):
        return max(self.conditions, default=1.0)


def solve_bsde_terminal(terminal, w, traj=None, degree=None):
    """(η, ζ) with η_k ≈ E[ℍ | F_k] and ζ_k ≈ E[η_{k+1} ΔW_k | F_k] / dt.

    terminal has shape (paths, r); a flat array is one scalar value per path.
    A terminal with a single leading row is deterministic: η ≡ ℍ, ζ ≡ 0.
    """
    grid = w.grid
    degree = toolkit_setting('REGRESSION_DEGREE') if degree is None else degree
    terminal = np.asarray(terminal, dtype=float)
    if terminal.ndim == 1:
        terminal = terminal[:, None]
    terminal = np.atleast_2d(terminal)
    n_steps = grid.n_steps
    if terminal.shape[0] == 1:
        eta = np.broadcast_to(terminal[:, None], (1, n_steps + 1, terminal.shape[1])).copy()
        return eta, np.zeros_like(eta)

    check_finite(terminal, 'BSDE terminal value')
    features = FeatureCache(w, traj)
    eta = np.zeros((w.n_paths, n_steps + 1, terminal.shape[1]))
    zeta = np.zeros_like(eta)
    eta[:, n_steps] = terminal
    for k in range(n_steps - 1, -1, -1):
        basis = features(k)
        eta[:, k], _ = conditional_expectation(basis, eta[:, k + 1], degree)
        zeta[:, k], _ = martingale_increment(basis, eta[:, k + 1], eta[:, k],
                                             w.increments[:, k], grid.dt, degree)
    return eta, zeta


def _generators(lin, k, p, q):
    """G_a(k) = l_a + b_a'p + σ_a'q for the four state arguments."""
    out = {}
    for a in STATE_ARGS:
        drift_t = np.swapaxes(lin.drift[a][:, k], -1, -2)
        diff_t = np.swapaxes(lin.diffusion[a][:, k], -1, -2)
        out[a] = (lin.running[a][:, k] + (drift_t @ p[..., None])[..., 0]
                  + (diff_t @ q[..., None])[..., 0])
    return out


def solve_absde(sys, u, w, traj=None, lin=None, degree=None):
    """Backward sweep for (p, q), the exact adjoint of the Euler scheme.

    The anticipated term at t_k + δ and the moving-average terms read
    generator values already produced by the sweep; conditioning is by
    regression on time-k variables. With deterministic derivatives the sweep
    runs on a single row and q ≡ 0.
    """
    if not sys.phi1.is_zero:
        raise UnsupportedRegime('the ABSDE form needs E1 constant, i.e. a zero φ1 kernel')
    grid = sys.grid
    N, d, dt, n = grid.n_steps, grid.delay_steps, grid.dt, sys.state_dim
    degree = toolkit_setting('REGRESSION_DEGREE') if degree is None else degree
    traj = simulate(sys, u, w) if traj is None else traj
    lin = linearize(sys, traj, u) if lin is None else lin
    deterministic = lin.deterministic
    lead = 1 if deterministic else w.n_paths
    features = None if deterministic else FeatureCache(w, traj)
    psi1 = kernel_table(sys.psi1, grid)
    use_psi1 = not sys.psi1.is_zero and not deterministic

    h = {a: np.broadcast_to(lin.terminal[a], (lead, n)) for a in STATE_ARGS}
    p = np.zeros((lead, N + 1, n))
    q = np.zeros_like(p)
    G = {a: np.zeros((lead, N, n)) for a in STATE_ARGS}
    p[:, N] = h['x'] + (h['y'] if d == 0 else 0.0)
    conditions = []

    def increment(i):
        # coefficient of x̂_i in the linear functional, i >= 1
        c = np.zeros((lead, n))
        if i <= N - 1:
            c = c + G['x'][:, i] * dt
        if i + d <= N - 1:
            c = c + G['y'][:, i + d] * dt
        if i == N:
            c = c + h['x']
        if i == N - d:
            c = c + h['y']
        if use_psi1 and i <= N - 1:
            future = np.einsum('jba,pjb->pa', psi1[i + 1:N, i], G['kappa'][:, i + 1:N]) * dt
            future = future + h['kappa'] @ psi1[N, i]
            c = c + future * w.increments[:, i, None]
        return c

    for k in range(N - 1, -1, -1):
        target = increment(k + 1) + (p[:, k + 1] if k + 1 < N else 0.0)
        if deterministic:
            p[:, k] = target
        else:
            basis = features(k)
            p[:, k], cond = conditional_expectation(basis, target, degree)
            q[:, k], _ = martingale_increment(basis, target, p[:, k], w.increments[:, k], dt,
                                              degree)
            conditions.append(cond)
        for a, value in _generators(lin, k, p[:, k], q[:, k]).items():
            G[a][:, k] = value
        check_finite(p[:, k], 'adjoint p', k)

    logger.debug('ABSDE solved (deterministic=%s, max cond=%.3e)', deterministic,
                 max(conditions, default=1.0))
    return AdjointSolution(grid=grid, p=p, q=q, deterministic=deterministic, degree=degree,
                           conditions=conditions)


def solve_bsvie_linear(sys, u, w, traj=None, lin=None, degree=None):
    """Volterra adjoint (Y, Z, η, ζ) for ψ1 = 0 and the aggregated (p, q).

    Y_k = 𝕃_k + b(k)'p_k + σ(k)'q_k, where p_k, q_k aggregate η, ζ with the
    conditional expectation of the tail sum of Y against the row weights.
    """
    if not sys.psi1.is_zero:
        raise UnsupportedRegime(
            'the Volterra adjoint with a non-zero ψ1 carries Malliavin terms and is not solved')
    grid = sys.grid
    N, d, dt, n = grid.n_steps, grid.delay_steps, grid.dt, sys.state_dim
    degree = toolkit_setting('REGRESSION_DEGREE') if degree is None else degree
    traj = simulate(sys, u, w) if traj is None else traj
    lin = linearize(sys, traj, u) if lin is None else lin
    deterministic = lin.deterministic
    lead = 1 if deterministic else w.n_paths
    features = None if deterministic else FeatureCache(w, traj)
    strict = toolkit_setting('STRICT_DELAY_INDICATOR')
    e1 = build_e1(sys.phi1, grid).values

    eta, zeta = solve_bsde_terminal(lin.terminal_row(), w, traj, degree)
    eta = np.broadcast_to(eta, (lead,) + eta.shape[1:])
    zeta = np.broadcast_to(zeta, (lead,) + zeta.shape[1:])

    def aggregate(block, k):
        one, two, three = block[:, :n], block[:, n:2 * n], block[:, 2 * n:3 * n]
        return one + delay_indicator(N - k, d, strict) * two + three @ e1[N, k]

    Y = np.zeros((lead, N, 4 * n))
    Z = np.zeros((lead, N + 1, n))
    p = np.zeros((lead, N + 1, n))
    q = np.zeros_like(p)
    p[:, N] = eta[:, N, :n] + (eta[:, N, n:2 * n] if d == 0 else 0.0)
    conditions = []
    for k in range(N - 1, -1, -1):
        later = np.arange(k + 1, N)
        tail = Y[:, k + 1:N, :n].sum(axis=1)
        mask = np.array([delay_indicator(s - k, d, strict) for s in later])
        if later.size:
            tail = tail + np.einsum('s,psa->pa', mask, Y[:, k + 1:N, n:2 * n])
            tail = tail + np.einsum('sba,psb->pa', e1[k + 1:N, k], Y[:, k + 1:N, 2 * n:3 * n])
        tail = tail * dt
        if deterministic:
            inner, band = tail, np.zeros_like(tail)
        else:
            basis = features(k)
            inner, cond = conditional_expectation(basis, tail, degree)
            band, _ = martingale_increment(basis, tail, inner, w.increments[:, k], dt, degree)
            conditions.append(cond)
        p[:, k] = aggregate(eta[:, k], k) + inner
        q[:, k] = aggregate(zeta[:, k], k) + band
        Z[:, k] = band
        b_row = np.swapaxes(lin.row('drift', k), -1, -2)
        s_row = np.swapaxes(lin.row('diffusion', k), -1, -2)
        Y[:, k] = (lin.state_cost_row(k) + (b_row @ p[:, k, :, None])[..., 0]
                   + (s_row @ q[:, k, :, None])[..., 0])
        check_finite(Y[:, k], 'Volterra adjoint Y', k)

    return AdjointSolution(grid=grid, p=p, q=q, deterministic=deterministic, degree=degree,
                           conditions=conditions, eta=np.asarray(eta), zeta=np.asarray(zeta),
                           Y=Y, Z=Z)


@dataclasses.dataclass(frozen=True)
class DualityReport:
    lhs: float
    lhs_std_err: float
    rhs: float
    rhs_std_err: float
    tolerance: float
    passed: bool

    @property
    def difference(self):
        return self.lhs - self.rhs


def _mean_se(values):
    values = np.asarray(values, dtype=float)
    se = float(np.std(values, ddof=1) / np.sqrt(values.size)) if values.size > 1 else 0.0
    return float(np.mean(values)), se


def duality_check(sys, u, v, w, adj=None, sigmas=None):
    """Both sides of E<ℍ, X_N> + E Σ 𝕃_k X_k dt = E<ℍ, φ_N> + E Σ <φ_k, Y_k> dt."""
    if not sys.psi1.is_zero:
        raise UnsupportedRegime('the duality check needs a zero ψ1 kernel')
    grid = sys.grid
    N, dt = grid.n_steps, grid.dt
    sigmas = toolkit_setting('STAT_SIGMAS') if sigmas is None else sigmas
    vs, traj = variational_system(sys, u, v, w)
    svie = build_svie(vs, w)
    X = simulate_svie(svie, w)
    phi = simulate_svie(svie, w, forcing_only=True)
    if adj is None:
        adj = solve_bsvie_linear(sys, u, w, traj=traj, lin=vs.lin)

    H = vs.lin.terminal_row()
    L = np.stack(np.broadcast_arrays(*[vs.lin.state_cost_row(k) for k in range(N)]), axis=1)
    lhs = np.sum(H * X[:, N], axis=1) + np.sum(L * X[:, :N], axis=(1, 2)) * dt
    rhs = np.sum(H * phi[:, N], axis=1) + np.sum(adj.Y * phi[:, :N], axis=(1, 2)) * dt
    lhs_mean, lhs_se = _mean_se(np.broadcast_to(lhs, (w.n_paths,)))
    rhs_mean, rhs_se = _mean_se(np.broadcast_to(rhs, (w.n_paths,)))
    scale = max(1.0, abs(lhs_mean), abs(rhs_mean))
    tolerance = sigmas * np.hypot(lhs_se, rhs_se) + 0.5 * np.sqrt(dt) * scale
    passed = bool(abs(lhs_mean - rhs_mean) <= tolerance)
    logger.info('duality: lhs=%.6g rhs=%.6g tol=%.3g passed=%s', lhs_mean, rhs_mean,
                tolerance, passed)
    return DualityReport(lhs_mean, lhs_se, rhs_mean, rhs_se, float(tolerance), passed)


def write_adjoint_csv(sol, fh):
    """Columns t, p_mean, p_std, q_mean, q_std (suffixed _i when n > 1)."""
    n = sol.p.shape[-1]
    header = ['t']
    for name in ('p', 'q'):
        for stat in ('mean', 'std'):
            header += [f'{name}_{stat}'] if n == 1 else [f'{name}_{stat}_{i}' for i in range(n)]
    writer = csv.writer(fh)
    writer.writerow(header)
    for k, t in enumerate(sol.grid.times):
        row = [repr(float(t))]
        for arr in (sol.p, sol.q):
            row += [repr(float(x)) for x in arr[:, k].mean(axis=0)]
            row += [repr(float(x)) for x in arr[:, k].std(axis=0)]
        writer.writerow(row)
