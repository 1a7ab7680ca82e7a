"""Memory kernels φ1, ψ1, φ2, ψ2 and the derived fields E1, E2."""

import dataclasses

import numpy as np

from .conf import toolkit_setting
from .exceptions import OutOfDomain

FORMS = ('zero', 'constant', 'exponential', 'windowed', 'tabulated')
READINGS = ('moving-window', 'literal')


@dataclasses.dataclass(frozen=True, eq=False)
class KernelSpec:
    form: str
    dim: int = 1
    c: np.ndarray | None = None
    lam: float = 0.0
    base: 'KernelSpec | None' = None
    window: float = 0.0
    t0: float = 0.0
    reading: str = 'moving-window'
    table: np.ndarray | None = None
    table_dt: float = 0.0

    @classmethod
    def zero(cls, dim=1):
        return cls(form='zero', dim=dim)

    @classmethod
    def constant(cls, c):
        c = np.atleast_2d(np.asarray(c, dtype=float))
        return cls(form='constant', dim=c.shape[0], c=c)

    @classmethod
    def exponential(cls, c, lam):
        c = np.atleast_2d(np.asarray(c, dtype=float))
        return cls(form='exponential', dim=c.shape[0], c=c, lam=float(lam))

    @classmethod
    def windowed(cls, base, window, t0, reading=None):
        reading = reading or toolkit_setting('WINDOW_READING')
        if reading not in READINGS:
            raise ValueError(f'unknown window reading {reading!r}')
        return cls(form='windowed', dim=base.dim, base=base, window=float(window),
                   t0=float(t0), reading=reading)

    @classmethod
    def tabulated(cls, table, t0, dt):
        table = np.asarray(table, dtype=float)
        if table.ndim == 2:
            table = table[:, :, None, None]
        return cls(form='tabulated', dim=table.shape[-1], table=table, t0=float(t0),
                   table_dt=float(dt))

    @classmethod
    def block_diagonal(cls, kernels, grid):
        """Tabulated kernel acting blockwise, one block per entry of kernels."""
        tables = [kernel_table(k, grid) for k in kernels]
        dim = sum(k.dim for k in kernels)
        n = grid.n_steps + 1
        out = np.zeros((n, n, dim, dim))
        offset = 0
        for k, table in zip(kernels, tables):
            out[:, :, offset:offset + k.dim, offset:offset + k.dim] = table
            offset += k.dim
        return cls.tabulated(out, grid.t0, grid.dt)

    @property
    def is_zero(self):
        if self.form == 'zero':
            return True
        if self.form in ('constant', 'exponential'):
            return not np.any(self.c)
        if self.form == 'windowed':
            return self.base.is_zero
        return not np.any(self.table)


def _window_indicator(k, t, s):
    eps = 1e-12 * max(1.0, abs(t))
    if t < k.t0 + k.window - eps:
        return 1.0
    if k.reading == 'literal':
        # 1_{[t+δ,T]}(t) is empty for δ > 0
        return 0.0
    return 1.0 if (s >= t - k.window - eps and s < t - eps) else 0.0


def eval_kernel(k, t, s):
    if s > t + 1e-12 * max(1.0, abs(t)):
        raise OutOfDomain(f'kernel evaluated at s={s} > t={t}')
    match k.form:
        case 'zero':
            return np.zeros((k.dim, k.dim))
        case 'constant':
            return k.c.copy()
        case 'exponential':
            return k.c * np.exp(k.lam * (t - s))
        case 'windowed':
            return eval_kernel(k.base, t, s) * _window_indicator(k, t, s)
        case 'tabulated':
            i = int(round((t - k.t0) / k.table_dt))
            j = int(round((s - k.t0) / k.table_dt))
            if not (0 <= j <= i < k.table.shape[0]):
                raise OutOfDomain(f'({t}, {s}) outside the tabulated grid')
            return k.table[i, j].copy()
    raise ValueError(f'unknown kernel form {k.form!r}')


def kernel_table(k, grid):
    """K[k, j] = kernel(t_k, t_j) for j <= k, zero above the diagonal."""
    n = grid.n_steps + 1
    idx = np.arange(n)
    lower = (idx[:, None] >= idx[None, :]).astype(float)
    match k.form:
        case 'zero':
            return np.zeros((n, n, k.dim, k.dim))
        case 'constant':
            return lower[:, :, None, None] * k.c
        case 'exponential':
            lag = (idx[:, None] - idx[None, :]) * grid.dt
            weights = np.where(lower > 0, np.exp(k.lam * np.maximum(lag, 0.0)), 0.0)
            return weights[:, :, None, None] * k.c
        case 'windowed':
            d = int(round(k.window / grid.dt))
            early = idx[:, None] < int(round((k.t0 - grid.t0) / grid.dt)) + d
            if k.reading == 'literal':
                mask = early
            else:
                lag = idx[:, None] - idx[None, :]
                mask = early | ((lag >= 1) & (lag <= d))
            return kernel_table(k.base, grid) * (mask * lower)[:, :, None, None]
        case 'tabulated':
            if k.table.shape[0] != n:
                raise OutOfDomain('tabulated kernel does not match the grid')
            return k.table * lower[:, :, None, None]
    raise ValueError(f'unknown kernel form {k.form!r}')


def kernel_bound(k, grid):
    table = kernel_table(k, grid)
    return float(np.max(np.linalg.norm(table, ord=2, axis=(2, 3)))) if table.size else 0.0


@dataclasses.dataclass(frozen=True, eq=False)
class E1Field:
    grid: object
    values: np.ndarray

    def at(self, k, j):
        return self.values[k, j]

    @property
    def is_zero(self):
        return not np.any(self.values)


def build_e1(k, grid):
    n = grid.n_steps + 1
    idx = np.arange(n)
    if k.form == 'zero':
        return E1Field(grid=grid, values=np.zeros((n, n, k.dim, k.dim)))
    if k.form == 'constant':
        lag = np.maximum(idx[:, None] - idx[None, :], 0) * grid.dt
        return E1Field(grid=grid, values=lag[:, :, None, None] * k.c)
    strict = (idx[:, None] > idx[None, :]).astype(float)
    terms = kernel_table(k, grid) * strict[:, :, None, None] * grid.dt
    # E1[k, j] = dt * sum_{i=j}^{k-1} φ1(t_k, t_i)
    values = np.flip(np.cumsum(np.flip(terms, axis=1), axis=1), axis=1)
    return E1Field(grid=grid, values=values)


@dataclasses.dataclass(frozen=True, eq=False)
class E2Field:
    """Per-path E2(t_k, t_j) = sum_{i=j}^{k-1} ψ1(t_k, t_i) ΔW_i, built one t-row at a time."""

    grid: object
    table: np.ndarray
    increments: np.ndarray
    zero: bool

    def row(self, k):
        n_paths = self.increments.shape[0]
        dim = self.table.shape[-1]
        out = np.zeros((n_paths, k + 1, dim, dim))
        if self.zero or k == 0:
            return out
        terms = self.table[k, :k][None] * self.increments[:, :k, None, None]
        out[:, :k] = np.flip(np.cumsum(np.flip(terms, axis=1), axis=1), axis=1)
        return out

    def at(self, k, j):
        return self.row(k)[:, j]

    def full(self):
        n = self.grid.n_steps + 1
        rows = [self.row(k) for k in range(n)]
        n_paths, dim = self.increments.shape[0], self.table.shape[-1]
        out = np.zeros((n_paths, n, n, dim, dim))
        for k, r in enumerate(rows):
            out[:, k, :k + 1] = r
        return out


def build_e2(k, w):
    return E2Field(grid=w.grid, table=kernel_table(k, w.grid), increments=w.increments,
                   zero=k.is_zero)
