"""Variational equation, its delay-free Volterra form and the first-order expansion gap."""

import dataclasses
import logging

import numpy as np

from .conf import toolkit_setting
from .exceptions import check_finite
from .kernels import build_e1, build_e2, kernel_table
from .sdde import MemorySum, StateTrajectory, memory_process, simulate
from .system import CONTROL_ARGS, STATE_ARGS

logger = logging.getLogger(__name__)


def _stack(blocks):
    lead = max(b.shape[0] for b in blocks)
    return np.stack([np.broadcast_to(b, (lead,) + b.shape[1:]) for b in blocks], axis=1)


def apply(coef, k, arg):
    """coef[:, k] (lead, n, dim) times arg (paths, dim), broadcast over paths."""
    return (coef[:, k] @ arg[..., None])[..., 0]


def delay_indicator(lag, d, strict=None):
    """1_{(δ,∞)}(t - s) on grid lags; the closed variant is a settings switch."""
    if strict is None:
        strict = toolkit_setting('STRICT_DELAY_INDICATOR')
    return 1.0 if (lag > d if strict else lag >= d) else 0.0


@dataclasses.dataclass(frozen=True, eq=False)
class Linearization:
    """Derivatives of b, σ, l along a candidate pair, stacked over k = 0..N-1.

    drift[a] and diffusion[a] have shape (lead, N, n, dim_a), running[a] has
    shape (lead, N, dim_a) and terminal[a] has shape (lead, n); lead is 1
    for deterministic derivatives and the path count otherwise.
    """

    grid: object
    state_dim: int
    control_dim: int
    drift: dict
    diffusion: dict
    running: dict
    terminal: dict

    @property
    def deterministic(self):
        arrays = list(self.drift.values()) + list(self.diffusion.values())
        arrays += [self.running[a] for a in STATE_ARGS] + list(self.terminal.values())
        return all(a.shape[0] == 1 for a in arrays)

    def row(self, kind, k):
        """[b_x b_y b_z b_κ](t_k) as one (lead, n, 4n) block."""
        table = self.drift if kind == 'drift' else self.diffusion
        return np.concatenate(np.broadcast_arrays(*[table[a][:, k] for a in STATE_ARGS]), axis=-1)

    def state_cost_row(self, k):
        """𝕃(t_k) = [l_x l_y l_z l_κ], shape (lead, 4n)."""
        return np.concatenate(np.broadcast_arrays(*[self.running[a][:, k] for a in STATE_ARGS]),
                              axis=-1)

    def terminal_row(self):
        """ℍ = [h_x h_y h_z h_κ], shape (lead, 4n)."""
        return np.concatenate(np.broadcast_arrays(*[self.terminal[a] for a in STATE_ARGS]),
                              axis=-1)


def linearize(sys, traj, u=None):
    grid = sys.grid
    n = sys.state_dim
    names = STATE_ARGS + CONTROL_ARGS
    drift = {a: [] for a in names}
    diffusion = {a: [] for a in names}
    running = {a: [] for a in names}
    for k in range(grid.n_steps):
        t = grid.time(k)
        args = traj.args_at(k)
        for a in names:
            drift[a].append(sys.drift.derivative(a, t, args, n))
            diffusion[a].append(sys.diffusion.derivative(a, t, args, n))
            running[a].append(np.atleast_2d(sys.running_cost.gradient(a, t, args)))
    terminal_args = traj.terminal_args()
    terminal = {a: np.atleast_2d(sys.terminal_cost.gradient(a, grid.T, terminal_args))
                for a in STATE_ARGS}

    lin = Linearization(
        grid=grid, state_dim=n, control_dim=sys.control_dim,
        drift={a: check_finite(_stack(v), f'b_{a}') for a, v in drift.items()},
        diffusion={a: check_finite(_stack(v), f'σ_{a}') for a, v in diffusion.items()},
        running={a: check_finite(_stack(v), f'l_{a}') for a, v in running.items()},
        terminal={a: check_finite(v, f'h_{a}') for a, v in terminal.items()},
    )
    logger.debug('linearized along %d paths (deterministic=%s)', traj.n_paths, lin.deterministic)
    return lin


@dataclasses.dataclass(frozen=True, eq=False)
class VariationalSystem:
    base: object
    lin: Linearization
    v: object

    def perturbations(self, increments):
        """v̂, μ̂, ν̂, λ̂: the direction and its memories; μ̂ is zero below t0."""
        grid = self.base.grid
        v = dataclasses.replace(self.v, initial=np.zeros_like(self.v.initial))
        return {
            'u': v.values,
            'mu': v.delayed(),
            'nu': memory_process(self.base.phi2, grid, v.values),
            'lam': memory_process(self.base.psi2, grid, v.values, increments),
        }

    def forcing(self, increments):
        """Ξb_k, Ξσ_k: the control-perturbation parts of drift and diffusion, (P, N, n)."""
        ctrl = self.perturbations(increments)
        n_paths, n = increments.shape[0], self.base.state_dim
        xib = np.zeros((n_paths, self.base.grid.n_steps, n))
        xisig = np.zeros_like(xib)
        for k in range(self.base.grid.n_steps):
            for a in CONTROL_ARGS:
                xib[:, k] += apply(self.lin.drift[a], k, ctrl[a][:, k])
                xisig[:, k] += apply(self.lin.diffusion[a], k, ctrl[a][:, k])
        return xib, xisig, ctrl


def variational_system(sys, u_star, v, w):
    """Linearize along the simulated candidate; returns the system and the candidate path."""
    traj = simulate(sys, u_star, w)
    return VariationalSystem(base=sys, lin=linearize(sys, traj, u_star), v=v), traj


def simulate_variational(vs, w):
    sys, lin = vs.base, vs.lin
    grid = sys.grid
    n, d, n_paths = sys.state_dim, grid.delay_steps, w.n_paths
    xib, xisig, ctrl = vs.forcing(w.increments)

    x = np.zeros((n_paths, grid.n_steps + 1, n))
    y, z, kappa = np.zeros_like(x), np.zeros_like(x), np.zeros_like(x)
    acc_z = MemorySum(sys.phi1, grid)
    acc_kappa = MemorySum(sys.psi1, grid)
    for k in range(grid.n_steps + 1):
        if k >= d:
            y[:, k] = x[:, k - d]
        z[:, k] = acc_z.value(n_paths, n)
        kappa[:, k] = acc_kappa.value(n_paths, n)
        if k == grid.n_steps:
            break
        state = {'x': x[:, k], 'y': y[:, k], 'z': z[:, k], 'kappa': kappa[:, k]}
        a = xib[:, k] + sum(apply(lin.drift[s], k, state[s]) for s in STATE_ARGS)
        g = xisig[:, k] + sum(apply(lin.diffusion[s], k, state[s]) for s in STATE_ARGS)
        dw = w.increments[:, k]
        x[:, k + 1] = x[:, k] + a * grid.dt + g * dw[:, None]
        check_finite(x[:, k + 1], 'variational state', k + 1)
        acc_z.push(x[:, k], grid.dt)
        acc_kappa.push(x[:, k], dw)

    return StateTrajectory(grid, x, y, z, kappa, ctrl['u'], ctrl['mu'], ctrl['nu'], ctrl['lam'])


@dataclasses.dataclass(frozen=True, eq=False)
class SvieSystem:
    """Blocks of X_k = Σ_{j<k}[𝔸(k,j)X_j + 𝔹(k,j)]dt + [ℂ(k,j)X_j + 𝔻(k,j)]ΔW_j.

    X stacks [x̂; ŷ; ẑ; κ̂]. The blocks are kept factored: row coefficients
    b(j) = [b_x b_y b_z b_κ], σ(j), forcing Ξb, Ξσ, and the row weights
    1, 1_{k-j>d}, E1(k,j), E2(k,j). With the Skorokhod correction on, row 4
    of 𝔸 and 𝔹 also carries -ψ1(t_k,t_j)σ(j). Blocks are defined for j < k.
    """

    grid: object
    state_dim: int
    brow: np.ndarray
    srow: np.ndarray
    xib: np.ndarray
    xisig: np.ndarray
    e1: object
    e2: object
    psi1: np.ndarray
    strict: bool
    skorokhod: bool

    @property
    def n_paths(self):
        return self.xib.shape[0]

    def indicator(self, k, j):
        return delay_indicator(k - j, self.grid.delay_steps, self.strict)

    def _correction(self, k, j):
        if not self.skorokhod:
            return np.zeros_like(self.psi1[k, j])
        return self.psi1[k, j]

    def _rows(self, k, j, top, bottom, part):
        lead = max(top.shape[0], bottom.shape[0])
        top = np.broadcast_to(top, (lead,) + top.shape[1:])
        bottom = np.broadcast_to(bottom, top.shape)
        e1 = self.e1.at(k, j)
        third = e1 @ top if top.ndim == 3 else top @ e1.T
        zero = np.zeros_like(top)
        if part == 1:
            rows = [top, self.indicator(k, j) * top, third, zero]
        elif part == 2:
            rows = [zero, zero, zero, bottom]
        else:
            rows = [top, self.indicator(k, j) * top, third, bottom]
        return np.concatenate(rows, axis=1)

    def block_A(self, k, j, part=None):
        """(lead, 4n, 4n); part=1 or 2 gives 𝔸₁ or 𝔸₂."""
        b, s = self.brow[:, j], self.srow[:, j]
        bottom = self.e2.at(k, j) @ b - self._correction(k, j) @ s
        return self._rows(k, j, b, bottom, part)

    def block_C(self, k, j, part=None):
        s = self.srow[:, j]
        return self._rows(k, j, s, self.e2.at(k, j) @ s, part)

    def block_B(self, k, j, part=None):
        """(paths, 4n)."""
        xb, xs = self.xib[:, j], self.xisig[:, j]
        bottom = (self.e2.at(k, j) @ xb[..., None])[..., 0] - xs @ self._correction(k, j).T
        return self._rows(k, j, xb, bottom, part)

    def block_D(self, k, j, part=None):
        xs = self.xisig[:, j]
        return self._rows(k, j, xs, (self.e2.at(k, j) @ xs[..., None])[..., 0], part)


def assemble_svie(vs, e1, e2):
    lin = vs.lin
    n_steps = vs.base.grid.n_steps
    xib, xisig, _ = vs.forcing(e2.increments)
    return SvieSystem(
        grid=vs.base.grid,
        state_dim=vs.base.state_dim,
        brow=_stack([lin.row('drift', k) for k in range(n_steps)]),
        srow=_stack([lin.row('diffusion', k) for k in range(n_steps)]),
        xib=xib,
        xisig=xisig,
        e1=e1,
        e2=e2,
        psi1=kernel_table(vs.base.psi1, vs.base.grid),
        strict=toolkit_setting('STRICT_DELAY_INDICATOR'),
        skorokhod=toolkit_setting('SKOROKHOD_CORRECTION'),
    )


def build_svie(vs, w):
    """assemble_svie with E1, E2 built from the base system's φ1, ψ1."""
    return assemble_svie(vs, build_e1(vs.base.phi1, vs.base.grid), build_e2(vs.base.psi1, w))


def simulate_svie(svie, w, forcing_only=False):
    """Left-point Volterra–Euler; forcing_only drops the 𝔸, ℂ terms and returns the free term φ.

    Returns X with shape (paths, N+1, 4n).
    """
    grid = svie.grid
    n, d, dt = svie.state_dim, grid.delay_steps, grid.dt
    n_paths = w.n_paths
    shift = 0 if svie.strict else 1
    e1 = svie.e1.values

    X = np.zeros((n_paths, grid.n_steps + 1, 4 * n))
    incs = np.zeros((n_paths, grid.n_steps, n))
    trace = np.zeros_like(incs)
    cumulative = np.zeros((n_paths, grid.n_steps + 1, n))
    for k in range(grid.n_steps + 1):
        if k > 0:
            X[:, k, :n] = cumulative[:, k]
            X[:, k, n:2 * n] = cumulative[:, min(max(k - d + shift, 0), k)]
            X[:, k, 2 * n:3 * n] = np.einsum('jab,pjb->pa', e1[k, :k], incs[:, :k])
            if not svie.e2.zero:
                row = svie.e2.row(k)[:, :k]
                X[:, k, 3 * n:] = np.einsum('pjab,pjb->pa', row, incs[:, :k])
                if svie.skorokhod:
                    X[:, k, 3 * n:] -= np.einsum('jab,pjb->pa', svie.psi1[k, :k], trace[:, :k]) * dt
            check_finite(X[:, k], 'SVIE state', k)
        if k == grid.n_steps:
            break
        a = np.broadcast_to(svie.xib[:, k], (n_paths, n))
        g = np.broadcast_to(svie.xisig[:, k], (n_paths, n))
        if not forcing_only:
            a = a + (svie.brow[:, k] @ X[:, k, :, None])[..., 0]
            g = g + (svie.srow[:, k] @ X[:, k, :, None])[..., 0]
        incs[:, k] = a * dt + g * w.increments[:, k, None]
        trace[:, k] = g
        cumulative[:, k + 1] = cumulative[:, k] + incs[:, k]
    return X


def simulate_svie_blocks(svie, w):
    """X_k summed literally from the 𝔸, 𝔹, ℂ, 𝔻 blocks.

    Quadratic in the step count per step; simulate_svie is the production path.
    """
    grid = svie.grid
    dt = grid.dt
    X = np.zeros((w.n_paths, grid.n_steps + 1, 4 * svie.state_dim))
    for k in range(1, grid.n_steps + 1):
        total = np.zeros_like(X[:, k])
        for j in range(k):
            xj = X[:, j, :, None]
            drift = (svie.block_A(k, j) @ xj)[..., 0] + svie.block_B(k, j)
            noise = (svie.block_C(k, j) @ xj)[..., 0] + svie.block_D(k, j)
            total = total + drift * dt + noise * w.increments[:, j, None]
        X[:, k] = check_finite(total, 'SVIE state', k)
    return X


def svie_discrepancy(vs, w):
    """sqrt(E max_k |X¹_k - x̂_k|²) between the Volterra form and the variational path."""
    xhat = simulate_variational(vs, w).x
    X = simulate_svie(build_svie(vs, w), w)
    worst = np.max(np.sum((X[:, :, :vs.base.state_dim] - xhat) ** 2, axis=2), axis=1)
    return float(np.sqrt(np.mean(worst)))


def fitted_order(dts, errors):
    """Slope of log(error) against log(dt)."""
    return float(np.polyfit(np.log(dts), np.log(errors), 1)[0])


@dataclasses.dataclass(frozen=True)
class ExpansionGap:
    rho: float
    gap: float
    std_err: float = 0.0


def expansion_gap(sys, u_star, v, rho_list, w):
    for rho in rho_list:
        if not 0 < rho <= 1:
            raise ValueError(f'rho must lie in (0, 1], got {rho}')
    vs, base = variational_system(sys, u_star, v, w)
    xhat = simulate_variational(vs, w).x
    gaps = []
    for rho in rho_list:
        moved = simulate(sys, u_star.perturbed(v, rho), w)
        residual = (moved.x - base.x) / rho - xhat
        worst = np.max(np.sum(residual ** 2, axis=2), axis=1)
        se = float(np.std(worst, ddof=1) / np.sqrt(worst.size)) if worst.size > 1 else 0.0
        gaps.append(ExpansionGap(rho=float(rho), gap=float(np.mean(worst)), std_err=se))
        logger.debug('expansion gap at rho=%g: %.3e', rho, gaps[-1].gap)
    return gaps
