"""Euler–Maruyama simulation of the controlled delay system and the Picard solver."""

import csv
import dataclasses
import logging

import numpy as np

from .exceptions import NoConvergence, check_finite
from .kernels import kernel_bound, kernel_table

logger = logging.getLogger(__name__)


class MemorySum:
    """Running sum m_k = sum_{j<k} K(t_k, t_j) v_j inc_j.

    Constant and exponential kernels use the recurrence
    S_{k+1} = e^{λ dt}(S_k + v_k inc_k); other forms keep the history.
    """

    def __init__(self, kernel, grid):
        self.kernel = kernel
        self.grid = grid
        self.k = 0
        self.recurrent = kernel.form in ('constant', 'exponential')
        self.state = None
        self.history = []
        if kernel.is_zero:
            self.mode = 'zero'
        elif self.recurrent:
            self.mode = 'recurrent'
            self.decay = np.exp(kernel.lam * grid.dt) if kernel.form == 'exponential' else 1.0
        else:
            self.mode = 'direct'
            self.table = kernel_table(kernel, grid)

    def value(self, n_paths, dim):
        if self.mode == 'zero' or self.k == 0:
            return np.zeros((n_paths, dim))
        if self.mode == 'recurrent':
            return np.broadcast_to(self.state @ self.kernel.c.T, (n_paths, dim))
        hist = np.stack(self.history, axis=1)
        return np.broadcast_to(np.einsum('jab,pjb->pa', self.table[self.k, :self.k], hist),
                               (n_paths, dim))

    def push(self, v, inc):
        """Add the j = k term and move to k + 1; inc is dt or ΔW_k per path."""
        term = v * (inc[:, None] if np.ndim(inc) else inc)
        if self.mode == 'recurrent':
            self.state = self.decay * (term if self.state is None else self.state + term)
        elif self.mode == 'direct':
            self.history.append(np.asarray(term))
        self.k += 1


def memory_process(kernel, grid, values, increments=None):
    """Memory of a whole path array values (P, N+1, dim); ds-integral unless increments given."""
    n_paths = values.shape[0] if increments is None else max(values.shape[0], increments.shape[0])
    dim = values.shape[-1]
    out = np.zeros((n_paths, grid.n_steps + 1, dim))
    if kernel.is_zero:
        return out
    acc = MemorySum(kernel, grid)
    for k in range(grid.n_steps + 1):
        out[:, k] = acc.value(n_paths, dim)
        if k < grid.n_steps:
            inc = grid.dt if increments is None else increments[:, k]
            acc.push(np.broadcast_to(values[:, k], (n_paths, dim)) if np.ndim(inc) else values[:, k],
                     inc)
    return out


def delayed_state(x, xi_table, d):
    """y_k = x_{k-d}, reading ξ below t0."""
    if d == 0:
        return x
    n_paths = x.shape[0]
    head = np.broadcast_to(xi_table[None, :d], (n_paths, d, x.shape[-1]))
    return np.concatenate([head, x[:, :-d]], axis=1)


@dataclasses.dataclass(frozen=True, eq=False)
class StateTrajectory:
    grid: object
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    kappa: np.ndarray
    u: np.ndarray
    mu: np.ndarray
    nu: np.ndarray
    lam: np.ndarray

    @property
    def n_paths(self):
        return self.x.shape[0]

    def args_at(self, k):
        return {name: getattr(self, name)[:, k]
                for name in ('x', 'y', 'z', 'kappa', 'u', 'mu', 'nu', 'lam')}

    def terminal_args(self):
        n = self.grid.n_steps
        return {name: getattr(self, name)[:, n] for name in ('x', 'y', 'z', 'kappa')}


def control_memories(sys, u, w):
    """(μ, ν, λ) of a control on the ensemble's noise."""
    mu = u.delayed()
    nu = memory_process(sys.phi2, sys.grid, u.values)
    lam = memory_process(sys.psi2, sys.grid, u.values, w.increments)
    return mu, nu, lam


def simulate(sys, u, w):
    grid = sys.grid
    n, d = sys.state_dim, grid.delay_steps
    n_paths = w.n_paths
    mu, nu, lam = control_memories(sys, u, w)
    xi = sys.xi_table()

    x = np.empty((n_paths, grid.n_steps + 1, n))
    y = np.empty_like(x)
    z = np.empty_like(x)
    kappa = np.empty_like(x)
    x[:, 0] = xi[-1]
    acc_z = MemorySum(sys.phi1, grid)
    acc_kappa = MemorySum(sys.psi1, grid)

    for k in range(grid.n_steps + 1):
        y[:, k] = x[:, k - d] if k >= d else xi[k]
        z[:, k] = acc_z.value(n_paths, n)
        kappa[:, k] = acc_kappa.value(n_paths, n)
        if k == grid.n_steps:
            break
        t = grid.time(k)
        args = {'x': x[:, k], 'y': y[:, k], 'z': z[:, k], 'kappa': kappa[:, k],
                'u': u.values[:, k], 'mu': mu[:, k], 'nu': nu[:, k], 'lam': lam[:, k]}
        dw = w.increments[:, k]
        x[:, k + 1] = (x[:, k] + sys.drift(t, args, n) * grid.dt
                       + sys.diffusion(t, args, n) * dw[:, None])
        check_finite(x[:, k + 1], 'state', k + 1)
        acc_z.push(x[:, k], grid.dt)
        acc_kappa.push(x[:, k], dw)

    return StateTrajectory(grid, x, y, z, kappa, u.values, mu, nu, lam)


def state_memories(sys, x, w):
    y = delayed_state(x, sys.xi_table(), sys.grid.delay_steps)
    z = memory_process(sys.phi1, sys.grid, x)
    kappa = memory_process(sys.psi1, sys.grid, x, w.increments)
    return y, z, kappa


@dataclasses.dataclass
class PicardReport:
    beta: float
    gaps: list
    ratios: list
    iterations: int
    converged: bool


def picard_solve(sys, u, w, tol=1e-10, max_iter=200, lipschitz=None):
    """Iterate x -> X with every state argument frozen at the previous iterate.

    Gaps are measured in the e^{-β(t - t0)}-weighted L² norm with
    β = 16 L² (1 + L_shift + 2 L_kernel² T) + 1.
    """
    grid = sys.grid
    L = lipschitz if lipschitz is not None else sys.lipschitz
    if L is None:
        raise ValueError('picard_solve needs a Lipschitz constant')
    horizon = grid.T - grid.t0
    kernel_l = max(kernel_bound(sys.phi1, grid), kernel_bound(sys.psi1, grid))
    beta = 16 * L ** 2 * (1 + 1.0 + 2 * kernel_l ** 2 * horizon) + 1
    weights = np.exp(-beta * (grid.times - grid.t0))

    n, n_paths = sys.state_dim, w.n_paths
    mu, nu, lam = control_memories(sys, u, w)
    x0 = sys.xi_table()[-1]
    current = np.broadcast_to(x0, (n_paths, grid.n_steps + 1, n)).copy()
    gaps, ratios = [], []

    for iteration in range(1, max_iter + 1):
        y, z, kappa = state_memories(sys, current, w)
        steps = np.zeros((n_paths, grid.n_steps, n))
        for k in range(grid.n_steps):
            args = {'x': current[:, k], 'y': y[:, k], 'z': z[:, k], 'kappa': kappa[:, k],
                    'u': u.values[:, k], 'mu': mu[:, k], 'nu': nu[:, k], 'lam': lam[:, k]}
            t = grid.time(k)
            steps[:, k] = (sys.drift(t, args, n) * grid.dt
                           + sys.diffusion(t, args, n) * w.increments[:, k, None])
        nxt = np.empty_like(current)
        nxt[:, 0] = x0
        nxt[:, 1:] = x0 + np.cumsum(steps, axis=1)
        check_finite(nxt, 'Picard iterate')
        diff = np.sum((nxt - current) ** 2, axis=2)
        gap = float(np.sqrt(np.mean(diff @ weights) * grid.dt))
        if gaps and gaps[-1] > 0:
            ratios.append(gap / gaps[-1])
        gaps.append(gap)
        logger.debug('picard iteration %d: gap %.3e', iteration, gap)
        current = nxt
        if gap <= tol:
            y, z, kappa = state_memories(sys, current, w)
            traj = StateTrajectory(grid, current, y, z, kappa, u.values, mu, nu, lam)
            return traj, PicardReport(beta, gaps, ratios, iteration, True)

    raise NoConvergence(
        f'Picard iteration did not reach tol={tol} in {max_iter} iterations '
        f'(last gap {gaps[-1]:.3e}); is the Lipschitz constant right?'
    )


def write_trajectory_csv(traj, fh):
    """Columns path, k, t, x, y, z, kappa, u, mu, nu, lambda (suffixed _i when vector valued)."""
    names = ('x', 'y', 'z', 'kappa', 'u', 'mu', 'nu', 'lam')
    arrays = {name: np.broadcast_to(getattr(traj, name),
                                    (traj.n_paths,) + getattr(traj, name).shape[1:])
              for name in names}
    header = ['path', 'k', 't']
    for name in names:
        label = 'lambda' if name == 'lam' else name
        dim = arrays[name].shape[-1]
        header += [label] if dim == 1 else [f'{label}_{i}' for i in range(dim)]
    writer = csv.writer(fh)
    writer.writerow(header)
    times = traj.grid.times
    for p in range(traj.n_paths):
        for k, t in enumerate(times):
            row = [p, k, repr(float(t))]
            for name in names:
                row += [repr(float(v)) for v in arrays[name][p, k]]
            writer.writerow(row)
