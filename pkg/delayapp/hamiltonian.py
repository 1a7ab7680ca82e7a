"""Hamiltonian evaluation and the pointwise maximum condition."""

import dataclasses
import logging

import numpy as np

from .adjoint import solve_absde, solve_bsvie_linear
from .conf import toolkit_setting
from .exceptions import UnsupportedRegime, check_finite
from .kernels import kernel_table
from .regression import FeatureCache, conditional_expectation, martingale_increment
from .sdde import simulate
from .system import CONTROL_ARGS
from .variation import linearize

logger = logging.getLogger(__name__)


@dataclasses.dataclass(frozen=True, eq=False)
class HamiltonianEval:
    value: np.ndarray
    partials: dict


def hamiltonian(sys, t, args, p, q):
    """H = l + <b, p> + <σ, q> and its partials in u, μ, ν, λ."""
    n = sys.state_dim
    p = np.atleast_2d(p)
    q = np.atleast_2d(q)
    value = (sys.running_cost.value(t, args) + np.sum(sys.drift(t, args, n) * p, axis=-1)
             + np.sum(sys.diffusion(t, args, n) * q, axis=-1))
    partials = {}
    for a in CONTROL_ARGS:
        b_a = np.swapaxes(sys.drift.derivative(a, t, args, n), -1, -2)
        s_a = np.swapaxes(sys.diffusion.derivative(a, t, args, n), -1, -2)
        partials[a] = check_finite(
            sys.running_cost.gradient(a, t, args) + (b_a @ p[..., None])[..., 0]
            + (s_a @ q[..., None])[..., 0], f'∂H/∂{a}')
    return HamiltonianEval(value=check_finite(np.asarray(value), 'Hamiltonian'), partials=partials)


def solve_adjoint(sys, u, w, traj=None, lin=None, degree=None):
    """Pick the backward solver the kernels allow."""
    if sys.phi1.is_zero:
        return solve_absde(sys, u, w, traj=traj, lin=lin, degree=degree)
    if sys.psi1.is_zero:
        return solve_bsvie_linear(sys, u, w, traj=traj, lin=lin, degree=degree)
    raise UnsupportedRegime('no adjoint solver for non-zero φ1 and ψ1 together')


def control_partials(lin, adj):
    """H_a(k) = l_a + b_a'p_k + σ_a'q_k for a in u, μ, ν, λ, shape (lead, N, m)."""
    N = lin.grid.n_steps
    out = {}
    for a in CONTROL_ARGS:
        b_t = np.swapaxes(lin.drift[a], -1, -2)
        s_t = np.swapaxes(lin.diffusion[a], -1, -2)
        out[a] = (lin.running[a] + (b_t @ adj.p[:, :N, :, None])[..., 0]
                  + (s_t @ adj.q[:, :N, :, None])[..., 0])
    return out


@dataclasses.dataclass(frozen=True, eq=False)
class MaximumConditionReport:
    times: np.ndarray
    G_mean: np.ndarray
    G_std_err: np.ndarray
    residual: np.ndarray
    residual_std_err: np.ndarray
    tolerance: float
    passed: bool

    @property
    def max_residual(self):
        return float(np.max(self.residual))

    @property
    def min_residual(self):
        return float(np.min(self.residual))


def condition_gradient(sys, lin, adj, w, traj=None, degree=None):
    """G_k, the gradient of the cost in the control at t_k, shape (lead, N, m).

    G_k = H_u(k) + E_k[H_μ(k+d) + Σ_{s>k} φ2(s,k)'H_ν(s)dt] + E_k[Λ_k ΔW_k]/dt
    with Λ_k = Σ_{s>k} ψ2(s,k)'H_λ(s)dt.
    """
    grid = sys.grid
    N, d, dt = grid.n_steps, grid.delay_steps, grid.dt
    H = control_partials(lin, adj)
    lead = max(v.shape[0] for v in H.values())
    H = {a: np.broadcast_to(v, (lead,) + v.shape[1:]) for a, v in H.items()}
    phi2 = kernel_table(sys.phi2, grid)
    psi2 = kernel_table(sys.psi2, grid)
    features = FeatureCache(w, traj) if lead > 1 else None

    G = np.array(H['u'], dtype=float)
    for k in range(N):
        later = np.zeros_like(G[:, k])
        if k + d <= N - 1:
            later = later + H['mu'][:, k + d]
        if k + 1 < N:
            later = later + np.einsum('sba,psb->pa', phi2[k + 1:N, k], H['nu'][:, k + 1:N]) * dt
        if lead == 1:
            G[:, k] += later
            continue
        basis = features(k)
        expected, _ = conditional_expectation(basis, later, degree)
        G[:, k] += expected
        if not sys.psi2.is_zero and k + 1 < N:
            big_lambda = np.einsum('sba,psb->pa', psi2[k + 1:N, k], H['lam'][:, k + 1:N]) * dt
            mean, _ = conditional_expectation(basis, big_lambda, degree)
            band, _ = martingale_increment(basis, big_lambda, mean, w.increments[:, k], dt, degree)
            G[:, k] += band
    return check_finite(G, 'maximum-condition gradient')


def maximum_condition(sys, u_star, w, adj=None, traj=None, lin=None, degree=None,
                      sigmas=None, dt_budget=2.0, components=None):
    """Projected-gradient residual |u* - Π_U(u* + sign·G)| per grid point.

    For U = R^m this is |G_k|; passes when max_k of the mean residual stays
    within sigmas standard errors plus dt_budget·dt. components restricts the
    check to a slice of the control, one player's block in a game.
    """
    grid = sys.grid
    N = grid.n_steps
    sigmas = toolkit_setting('STAT_SIGMAS') if sigmas is None else sigmas
    traj = simulate(sys, u_star, w) if traj is None else traj
    lin = linearize(sys, traj, u_star) if lin is None else lin
    adj = solve_adjoint(sys, u_star, w, traj=traj, lin=lin, degree=degree) if adj is None else adj
    G = condition_gradient(sys, lin, adj, w, traj=traj, degree=degree)

    components = slice(None) if components is None else components
    G = G[..., components]
    u = u_star.values[:, :N, components]
    stepped = u + sys.sign * G
    lower = -np.inf if u_star.lower is None else u_star.lower
    upper = np.inf if u_star.upper is None else u_star.upper
    residual = np.max(np.abs(u - np.clip(stepped, lower, upper)), axis=-1)

    def mean_se(values):
        if values.shape[0] == 1:
            return values[0], np.zeros_like(values[0])
        return values.mean(axis=0), values.std(axis=0, ddof=1) / np.sqrt(values.shape[0])

    G_mean, G_se = mean_se(G)
    res_mean, res_se = mean_se(residual)
    tolerance = float(sigmas * np.max(res_se) + dt_budget * grid.dt)
    passed = bool(np.max(res_mean) <= tolerance)
    logger.info('maximum condition: max residual %.3e, tolerance %.3e, passed=%s',
                float(np.max(res_mean)), tolerance, passed)
    return MaximumConditionReport(times=grid.times[:N], G_mean=G_mean, G_std_err=G_se,
                                  residual=res_mean, residual_std_err=res_se,
                                  tolerance=tolerance, passed=passed)
