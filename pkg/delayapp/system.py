"""Problem description: coefficients, costs, controls and the delay system itself."""

import dataclasses

import numpy as np

from .conf import toolkit_setting
from .kernels import KernelSpec

STATE_ARGS = ('x', 'y', 'z', 'kappa')
CONTROL_ARGS = ('u', 'mu', 'nu', 'lam')
ARGS = STATE_ARGS + CONTROL_ARGS

MAXIMIZE = 'maximize'
MINIMIZE = 'minimize'


def _resolve(entry, t):
    if entry is None:
        return None
    return np.asarray(entry(t) if callable(entry) else entry, dtype=float)


def _fd_step(values):
    return toolkit_setting('FD_STEP') * (1.0 + np.abs(values))


@dataclasses.dataclass(frozen=True)
class LinearCoefficients:
    """Affine map const + sum_a M_a·a; entries are arrays or callables of t."""

    x: object = None
    y: object = None
    z: object = None
    kappa: object = None
    u: object = None
    mu: object = None
    nu: object = None
    lam: object = None
    const: object = None

    is_linear = True

    def matrix(self, name, t, n, dim):
        value = _resolve(getattr(self, name), t)
        if value is None:
            return np.zeros((n, dim))
        return np.broadcast_to(np.atleast_2d(value), (n, dim))

    def __call__(self, t, args, n):
        out = np.zeros((1, n))
        const = _resolve(self.const, t)
        if const is not None:
            out = out + np.atleast_1d(const)
        for name in ARGS:
            if getattr(self, name) is None:
                continue
            arg = args[name]
            out = out + arg @ self.matrix(name, t, n, arg.shape[-1]).T
        return out

    def derivative(self, name, t, args, n):
        return self.matrix(name, t, n, args[name].shape[-1])[None]


@dataclasses.dataclass(frozen=True)
class CallableCoefficients:
    """Vectorised fn(t, x, y, z, kappa, u, mu, nu, lam) -> (paths, n)."""

    fn: object
    lipschitz: float | None = None

    is_linear = False

    def __call__(self, t, args, n):
        return np.asarray(self.fn(t, **args), dtype=float).reshape(-1, n)

    def derivative(self, name, t, args, n):
        base = args[name]
        n_paths = max(a.shape[0] for a in args.values())
        dim = base.shape[-1]
        full = np.broadcast_to(base, (n_paths, dim))
        out = np.empty((n_paths, n, dim))
        for i in range(dim):
            h = _fd_step(full[:, i])
            up, down = full.copy(), full.copy()
            up[:, i] += h
            down[:, i] -= h
            f_up = self(t, {**args, name: up}, n)
            f_down = self(t, {**args, name: down}, n)
            out[:, :, i] = (f_up - f_down) / (2 * h[:, None])
        return out


@dataclasses.dataclass(frozen=True)
class QuadraticCost:
    """const + sum_a <c_a, a> + 1/2 sum_a a'Q_a a, entries arrays or callables of t."""

    linear: dict = dataclasses.field(default_factory=dict)
    quadratic: dict = dataclasses.field(default_factory=dict)
    const: float = 0.0

    def value(self, t, args):
        total = np.full(max(a.shape[0] for a in args.values()), float(self.const))
        for name, c in self.linear.items():
            total = total + args[name] @ np.atleast_1d(_resolve(c, t))
        for name, q in self.quadratic.items():
            a = args[name]
            total = total + 0.5 * np.einsum('pi,ij,pj->p', a, self._sym(q, t, a.shape[-1]), a)
        return total

    def gradient(self, name, t, args):
        dim = args[name].shape[-1]
        grad = np.zeros((1, dim))
        if name in self.linear:
            grad = grad + np.atleast_1d(_resolve(self.linear[name], t))
        if name in self.quadratic:
            grad = grad + args[name] @ self._sym(self.quadratic[name], t, dim)
        return grad

    @staticmethod
    def _sym(q, t, dim):
        q = np.broadcast_to(np.atleast_2d(_resolve(q, t)), (dim, dim))
        if q.shape == (1, 1) or dim == 1:
            return q
        return 0.5 * (q + q.T)

    @property
    def is_zero(self):
        return not self.linear and not self.quadratic and self.const == 0


@dataclasses.dataclass(frozen=True)
class CallableCost:
    """Vectorised fn(t, **args) -> (paths,), gradients by central differences."""

    fn: object

    is_zero = False

    def value(self, t, args):
        n_paths = max(a.shape[0] for a in args.values())
        return np.broadcast_to(np.asarray(self.fn(t, **args), dtype=float), (n_paths,))

    def gradient(self, name, t, args):
        n_paths = max(a.shape[0] for a in args.values())
        base = np.broadcast_to(args[name], (n_paths, args[name].shape[-1]))
        out = np.empty(base.shape)
        for i in range(base.shape[-1]):
            h = _fd_step(base[:, i])
            up, down = base.copy(), base.copy()
            up[:, i] += h
            down[:, i] -= h
            out[:, i] = (self.value(t, {**args, name: up})
                         - self.value(t, {**args, name: down})) / (2 * h)
        return out


@dataclasses.dataclass(frozen=True, eq=False)
class ControlProcess:
    """Control on grid indices 0..N plus the initial segment on t_{-d}..t_{-1}.

    values has shape (1, N+1, m) for open-loop controls and (paths, N+1, m)
    for path-indexed ones.
    """

    grid: object
    values: np.ndarray
    initial: np.ndarray
    lower: float | None = None
    upper: float | None = None

    def __post_init__(self):
        if self.lower is not None or self.upper is not None:
            object.__setattr__(self, 'values', np.clip(self.values, self.lower, self.upper))

    @classmethod
    def _initial(cls, grid, m, initial):
        d = grid.delay_steps
        if initial is None:
            return np.zeros((d, m))
        if callable(initial):
            times = grid.t0 + grid.dt * np.arange(-d, 0)
            return np.array([np.atleast_1d(initial(t)) for t in times]).reshape(d, m)
        return np.broadcast_to(np.asarray(initial, dtype=float), (d, m)).copy()

    @classmethod
    def constant(cls, value, grid, initial=None, **bounds):
        value = np.atleast_1d(np.asarray(value, dtype=float))
        values = np.broadcast_to(value, (1, grid.n_steps + 1, value.size)).copy()
        return cls(grid, values, cls._initial(grid, value.size, initial), **bounds)

    @classmethod
    def from_function(cls, fn, grid, initial=None, **bounds):
        values = np.array([np.atleast_1d(fn(t)) for t in grid.times], dtype=float)
        return cls(grid, values[None], cls._initial(grid, values.shape[-1], initial), **bounds)

    @classmethod
    def from_array(cls, values, grid, initial=None, **bounds):
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[None, :, None]
        elif values.ndim == 2:
            values = values[None]
        return cls(grid, values, cls._initial(grid, values.shape[-1], initial), **bounds)

    @classmethod
    def adapted(cls, fn, w, initial=None, **bounds):
        """Path-indexed control; fn(k, t_k, W(t_k)) sees the noise up to t_k only."""
        brownian = w.paths()
        columns = [np.asarray(fn(k, w.grid.time(k), brownian[:, k]), dtype=float)
                   .reshape(w.n_paths, -1) for k in range(w.grid.n_steps + 1)]
        values = np.stack(columns, axis=1)
        return cls(w.grid, values, cls._initial(w.grid, values.shape[-1], initial), **bounds)

    @property
    def dim(self):
        return self.values.shape[-1]

    @property
    def is_open_loop(self):
        return self.values.shape[0] == 1

    def perturbed(self, v, rho):
        """u + rho·v; the initial segment is kept."""
        return dataclasses.replace(self, values=self.values + rho * v.values)

    def zero_like(self):
        return dataclasses.replace(self, values=np.zeros((1,) + self.values.shape[1:]),
                                   initial=np.zeros_like(self.initial), lower=None, upper=None)

    def delayed(self):
        """μ_k = u_{k-d}, reading the initial segment below t0."""
        d = self.grid.delay_steps
        if d == 0:
            return self.values
        n_paths = self.values.shape[0]
        head = np.broadcast_to(self.initial[None], (n_paths,) + self.initial.shape)
        return np.concatenate([head, self.values[:, :-d]], axis=1)


@dataclasses.dataclass(frozen=True, eq=False)
class DelaySystem:
    grid: object
    drift: object
    diffusion: object
    running_cost: object
    terminal_cost: object
    state_dim: int = 1
    control_dim: int = 1
    phi1: KernelSpec = None
    psi1: KernelSpec = None
    phi2: KernelSpec = None
    psi2: KernelSpec = None
    xi: object = 0.0
    orientation: str = MAXIMIZE
    lipschitz: float | None = None

    def __post_init__(self):
        for name, dim in (('phi1', self.state_dim), ('psi1', self.state_dim),
                          ('phi2', self.control_dim), ('psi2', self.control_dim)):
            kernel = getattr(self, name)
            if kernel is None:
                object.__setattr__(self, name, KernelSpec.zero(dim))
            elif kernel.dim != dim:
                raise ValueError(f'{name} has dimension {kernel.dim}, expected {dim}')
        if self.orientation not in (MAXIMIZE, MINIMIZE):
            raise ValueError(f'unknown orientation {self.orientation!r}')

    @property
    def sign(self):
        """+1 when the cost is maximised, -1 when it is minimised."""
        return 1.0 if self.orientation == MAXIMIZE else -1.0

    def xi_table(self):
        """ξ at t_{-d}..t_0, shape (d+1, n)."""
        d = self.grid.delay_steps
        times = self.grid.t0 + self.grid.dt * np.arange(-d, 1)
        if callable(self.xi):
            rows = [np.atleast_1d(self.xi(t)) for t in times]
            return np.array(rows, dtype=float).reshape(d + 1, self.state_dim)
        return np.broadcast_to(np.asarray(self.xi, dtype=float), (d + 1, self.state_dim)).copy()

    def with_costs(self, running_cost, terminal_cost):
        return dataclasses.replace(self, running_cost=running_cost, terminal_cost=terminal_cost)
