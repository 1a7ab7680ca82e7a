"""TOML experiment configs: parsing, form validation and construction of the problem objects."""

import dataclasses
import logging
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path

import numpy as np
from django.core.exceptions import NON_FIELD_ERRORS, ValidationError

from .exceptions import ConfigError
from .forms import (
    CoefficientForm, ControlForm, ExperimentConfigForm, KernelForm, LqForm, MatrixField, SystemForm,
)
from .kernels import KernelSpec
from .lq import LqSpec
from .system import (
    ARGS, STATE_ARGS, CallableCoefficients, ControlProcess, DelaySystem, LinearCoefficients,
    QuadraticCost,
)

logger = logging.getLogger(__name__)

OVERRIDES = {
    'seed': ('monte_carlo', 'seed'),
    'paths': ('monte_carlo', 'paths'),
    'steps': ('grid', 'steps'),
    't0': ('grid', 't0'),
    'T': ('grid', 'T'),
    'delta': ('grid', 'delta'),
}


@dataclasses.dataclass(frozen=True)
class ExperimentConfig:
    text: str
    overrides: dict
    data: dict
    subcommand: str | None
    grid: object
    n_paths: int
    seed: int
    degree: int | None

    @property
    def options(self):
        return self.data.get('options', {})

    def echo(self):
        """Everything needed to rebuild this config with load_config."""
        return {'text': self.text, 'overrides': dict(self.overrides)}

    def with_grid(self, grid):
        return dataclasses.replace(self, grid=grid)


def _errors(form, prefix=''):
    out = {}
    for name, messages in form.errors.items():
        if name == NON_FIELD_ERRORS:
            key = prefix.rstrip('.') or NON_FIELD_ERRORS
        else:
            key = f'{prefix}{name}'
        out.setdefault(key, []).extend(str(m) for m in messages)
    return out


def _validated(form_class, data, prefix):
    if data is not None and not isinstance(data, dict):
        raise ConfigError({prefix.rstrip('.'): ['Expected a table']})
    form = form_class(data or {})
    if not form.is_valid():
        raise ConfigError(_errors(form, prefix))
    return form.cleaned_data


def load_config(path=None, text=None, overrides=None):
    """Parse a TOML config, apply flag overrides and validate the grid and Monte Carlo tables."""
    if text is None:
        if path is None:
            raise ValueError('load_config needs a path or the config text')
        text = Path(path).read_text()
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError({NON_FIELD_ERRORS: [f'Not valid TOML: {exc}']})
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    for key, value in overrides.items():
        if key not in OVERRIDES:
            raise ConfigError({key: ['Unknown override']})
        section, name = OVERRIDES[key]
        data.setdefault(section, {})[name] = value

    flat = {'subcommand': data.get('subcommand')}
    flat.update(data.get('grid', {}))
    flat.update(data.get('monte_carlo', {}))
    if 'degree' in data.get('options', {}):
        flat['degree'] = data['options']['degree']
    cleaned = _validated(ExperimentConfigForm, flat, '')
    logger.debug('config validated: %d paths, %d steps', cleaned['paths'], cleaned['steps'])
    return ExperimentConfig(text=text, overrides=overrides, data=data,
                            subcommand=cleaned.get('subcommand') or None, grid=cleaned['grid'],
                            n_paths=cleaned['paths'], seed=cleaned['seed'],
                            degree=cleaned.get('degree'))


def _matrix(value, shape, field):
    """Broadcast a scalar, row or full matrix to shape; scalars fill every entry."""
    try:
        return np.broadcast_to(np.asarray(value, dtype=float), shape).copy()
    except ValueError:
        raise ConfigError({field: [f'Expected shape {shape}, got {np.shape(value)}']})


def build_kernel(data, dim, grid, prefix):
    """Kernel from a tagged table such as {form = "exponential", c = 1.0, lambda = -0.5}."""
    if data is None:
        return KernelSpec.zero(dim)
    raw = {('decay' if k == 'lambda' else k): v for k, v in data.items() if k != 'base'}
    cleaned = _validated(KernelForm, raw, prefix)
    form = cleaned['form']
    c = None if cleaned.get('c') is None else _matrix(cleaned['c'], (dim, dim), f'{prefix}c')
    match form:
        case 'zero':
            return KernelSpec.zero(dim)
        case 'constant':
            return KernelSpec.constant(c)
        case 'exponential':
            return KernelSpec.exponential(c, cleaned['decay'])
        case 'windowed':
            if 'base' not in data:
                raise ConfigError({f'{prefix}base': ['A windowed kernel needs its base kernel']})
            base = build_kernel(data['base'], dim, grid, f'{prefix}base.')
            return KernelSpec.windowed(base, cleaned['window'], grid.t0,
                                       reading=cleaned.get('reading') or None)


def _coefficients(data, n, m, prefix):
    cleaned = _validated(CoefficientForm, data, prefix)
    entries = {}
    for name in ARGS:
        if cleaned.get(name) is not None:
            dim = n if name in STATE_ARGS else m
            entries[name] = _matrix(cleaned[name], (n, dim), f'{prefix}{name}')
    if cleaned.get('const') is not None:
        entries['const'] = np.broadcast_to(cleaned['const'], (n,)).copy()
    linear = LinearCoefficients(**entries)
    quad = cleaned.get('quadratic_x')
    if quad is None:
        return linear
    quad = np.broadcast_to(quad, (n,)).copy()

    def fn(t, **args):
        return linear(t, args, n) + quad * args['x'] ** 2

    return CallableCoefficients(fn)


def _cost(data, prefix):
    if not data:
        return QuadraticCost()
    parts = {}
    for part in ('linear', 'quadratic'):
        table = data.get(part, {})
        unknown = set(table) - set(ARGS)
        if unknown:
            raise ConfigError({f'{prefix}{part}.{sorted(unknown)[0]}': ['Unknown argument']})
        parts[part] = {}
        for name, value in table.items():
            try:
                parts[part][name] = MatrixField().clean(value)
            except ValidationError as exc:
                raise ConfigError({f'{prefix}{part}.{name}': exc.messages})
    return QuadraticCost(linear=parts['linear'], quadratic=parts['quadratic'],
                         const=float(data.get('const', 0.0)))


def build_system(config):
    data = config.data.get('system', {})
    cleaned = _validated(SystemForm, {k: v for k, v in data.items() if not isinstance(v, dict)},
                         'system.')
    n, m, grid = cleaned['state_dim'], cleaned['control_dim'], config.grid
    kernels = data.get('kernels', {})
    xi = cleaned.get('xi')
    return DelaySystem(
        grid=grid,
        drift=_coefficients(data.get('drift'), n, m, 'system.drift.'),
        diffusion=_coefficients(data.get('diffusion'), n, m, 'system.diffusion.'),
        running_cost=_cost(data.get('running_cost'), 'system.running_cost.'),
        terminal_cost=_cost(data.get('terminal_cost'), 'system.terminal_cost.'),
        state_dim=n,
        control_dim=m,
        phi1=build_kernel(kernels.get('phi1'), n, grid, 'system.kernels.phi1.'),
        psi1=build_kernel(kernels.get('psi1'), n, grid, 'system.kernels.psi1.'),
        phi2=build_kernel(kernels.get('phi2'), m, grid, 'system.kernels.phi2.'),
        psi2=build_kernel(kernels.get('psi2'), m, grid, 'system.kernels.psi2.'),
        xi=0.0 if xi is None else np.broadcast_to(xi, (n,)).copy(),
        orientation=cleaned['orientation'],
        lipschitz=cleaned.get('lipschitz'),
    )


def build_control(config, dim, section='control'):
    """Deterministic control from a [control]-style table; a missing table is the zero control."""
    cleaned = _validated(ControlForm, config.data.get(section), f'{section}.')
    grid = config.grid
    value = np.zeros(dim) if cleaned.get('value') is None else np.broadcast_to(
        cleaned['value'], (dim,)).copy()
    initial = 0.0 if cleaned.get('initial') is None else cleaned['initial']
    bounds = {'lower': cleaned.get('lower'), 'upper': cleaned.get('upper')}
    kind = cleaned['kind']
    slope = cleaned.get('slope') or 0.0
    amplitude = 1.0 if cleaned.get('amplitude') is None else cleaned['amplitude']
    frequency = 1.0 if cleaned.get('frequency') is None else cleaned['frequency']

    def fn(t):
        s = (t - grid.t0) / (grid.T - grid.t0)
        match kind:
            case 'zero':
                return np.zeros(dim)
            case 'constant':
                return value
            case 'linear':
                return value + slope * (t - grid.t0)
            case 'cosine':
                return value + amplitude * np.cos(2 * np.pi * frequency * s)

    return ControlProcess.from_function(fn, grid, initial=np.broadcast_to(initial, (dim,)),
                                        **bounds)


def build_lq_spec(config, section='lq', data=None):
    data = config.data.get(section, {}) if data is None else data
    prefix = f'{section}.'
    cleaned = _validated(LqForm, {k: v for k, v in data.items() if not isinstance(v, dict)},
                         prefix)
    kernels = data.get('kernels', {})
    grid = config.grid
    return LqSpec(
        grid=grid,
        **{name: cleaned[name] for name in LqForm.base_fields},
        **{name: build_kernel(kernels.get(name), 1, grid, f'{prefix}kernels.{name}.')
           for name in ('phi1', 'psi1', 'phi2', 'psi2')},
    )
