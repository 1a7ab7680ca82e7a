"""Experiment runner: one function per subcommand, each returning a RunReport."""

import csv
import dataclasses
import json
import logging
import os
import tempfile
import time
from pathlib import Path

import numpy as np
from django.core.serializers.json import DjangoJSONEncoder

from . import __version__
from .adjoint import duality_check, write_adjoint_csv
from .config import build_control, build_lq_spec, build_system, load_config
from .cost import (
    FINITE_DIFFERENCE, VARIATIONAL, McEstimate, crn_variance_comparison, evaluate_cost, gateaux,
    variational_inequality_check,
)
from .exceptions import DelayToolkitError
from .grid import make_grid, sample_brownian
from .hamiltonian import maximum_condition, solve_adjoint
from .kernels import KernelSpec
from .lq import (
    DEFAULT_RHOS, direction_bank, glue_lq_game, lq_closed_form, lq_system, lq_verify_optimality,
    nash_check, stated_special_case,
)
from .malliavin import TerminalState, clark_ocone_check, terminal_brownian, terminal_brownian_squared
from .models import SUBCOMMANDS, ExperimentRun
from .sdde import picard_solve, simulate, write_trajectory_csv
from .system import ControlProcess, DelaySystem, LinearCoefficients, QuadraticCost
from .variation import expansion_gap, fitted_order, svie_discrepancy, variational_system

logger = logging.getLogger(__name__)

PASS = 'pass'
FINDING = 'finding'
PLOT_HEADER = ('series', 'x', 'y', 'y_stderr')


def _plain(value):
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, np.generic):
        return value.item()
    return value


@dataclasses.dataclass
class RunReport:
    subcommand: str
    status: str
    verdicts: dict
    estimates: dict
    tables: dict
    details: dict
    config: dict
    seed: int
    n_paths: int
    wall_time: float = 0.0
    version: str = __version__

    @property
    def passed(self):
        return self.status == PASS

    def to_json(self):
        return json.dumps(_plain(dataclasses.asdict(self)), cls=DjangoJSONEncoder, indent=2,
                          sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))


def _rows(series, xs, ys, ses=None):
    ses = np.zeros(len(xs)) if ses is None else ses
    return [[series, float(x), float(y), float(s)] for x, y, s in zip(xs, ys, ses)]


def _mean_rows(series, times, values):
    """Per-time mean and standard error of a (paths, N+1) array."""
    values = np.asarray(values, dtype=float)
    if values.shape[0] > 1:
        se = values.std(axis=0, ddof=1) / np.sqrt(values.shape[0])
    else:
        se = np.zeros(values.shape[1])
    return _rows(series, times, values.mean(axis=0), se)


def _atomic_write(path, write):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f'.{path.name}.')
    try:
        with os.fdopen(fd, 'w', newline='') as fh:
            write(fh)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def _problem(config):
    """(system, control); an [lq] table builds the LQ system with its closed form as control."""
    if 'lq' in config.data:
        spec = build_lq_spec(config)
        sys = lq_system(spec)
        if 'control' in config.data:
            return sys, build_control(config, 1)
        return sys, lq_closed_form(spec)
    sys = build_system(config)
    return sys, build_control(config, sys.control_dim)


def _ensemble(config, offset=0):
    return sample_brownian(config.grid, config.n_paths, config.seed + offset)


def run_simulate(config, out):
    sys, u = _problem(config)
    w = _ensemble(config)
    traj = simulate(sys, u, w)
    grid = config.grid
    verdicts, details = {}, {}
    if config.options.get('picard'):
        fixed, picard = picard_solve(sys, u, w, tol=config.options.get('tol', 1e-10),
                                     lipschitz=config.options.get('lipschitz'))
        verdicts['picard_contraction'] = all(r <= 0.5 for r in picard.ratios[1:])
        details['picard'] = dataclasses.asdict(picard)
        details['picard_euler_gap'] = float(np.max(np.abs(fixed.x - traj.x)))
    tables = {'state': []}
    for i in range(sys.state_dim):
        tables['state'] += _mean_rows(f'x_{i}', grid.times, traj.x[:, :, i])
    estimates = {f'x_T_{i}': McEstimate.from_samples(traj.x[:, -1, i], w.seed).as_dict()
                 for i in range(sys.state_dim)}
    if out is not None:
        count = config.options.get('export_paths', 20)
        head = dataclasses.replace(traj, **{name: getattr(traj, name)[:count] for name in
                                            ('x', 'y', 'z', 'kappa', 'u', 'mu', 'nu', 'lam')})
        _atomic_write(Path(out) / 'trajectory.csv', lambda fh: write_trajectory_csv(head, fh))
    return verdicts, estimates, tables, details


def run_svie_check(config, out):
    sys, u = _problem(config)
    v = build_control(config, sys.control_dim, 'direction')
    grid = config.grid
    verdicts, tables, details = {}, {}, {}
    if 'refinement' in config.options:
        dts, errors = [], []
        for steps in config.options['refinement']:
            fine = make_grid(grid.t0, grid.T, steps, grid.delta)
            local = config.with_grid(fine)
            local_sys, local_u = _problem(local)
            w = _ensemble(local)
            vs, _ = variational_system(local_sys, local_u,
                                       build_control(local, local_sys.control_dim, 'direction'), w)
            dts.append(fine.dt)
            errors.append(svie_discrepancy(vs, w))
        order = fitted_order(dts, errors)
        low, high = config.options.get('order_range', (0.35, 0.65))
        verdicts['discrepancy_order'] = low <= order <= high
        details['fitted_order'] = order
        tables['svie_discrepancy'] = _rows('discrepancy', dts, errors)
    if 'rhos' in config.options:
        w = _ensemble(config)
        gaps = expansion_gap(sys, u, v, config.options['rhos'], w)
        values = [g.gap for g in gaps]
        if isinstance(sys.drift, LinearCoefficients) and isinstance(sys.diffusion,
                                                                      LinearCoefficients):
            verdicts['expansion_exact'] = max(values) <= 1e-10
        else:
            verdicts['expansion_decreasing'] = (
                all(b < a for a, b in zip(values, values[1:])) and values[-1] <= values[0] / 10
            )
        tables['expansion_gap'] = _rows('gap', [g.rho for g in gaps], values,
                                        [g.std_err for g in gaps])
    return verdicts, {}, tables, details


def run_cost(config, out):
    sys, u = _problem(config)
    w = _ensemble(config)
    estimates = {'J': evaluate_cost(sys, u, w).as_dict()}
    details = {}
    if 'alternative' in config.data:
        alt = build_control(config, sys.control_dim, 'alternative')
        estimates['J_alternative'] = evaluate_cost(sys, alt, w).as_dict()
        details['crn'] = crn_variance_comparison(sys, u, alt, w, _ensemble(config, offset=1))
    return {}, estimates, {}, details


def run_grad_check(config, out):
    sys, u = _problem(config)
    v = build_control(config, sys.control_dim, 'direction')
    w = _ensemble(config)
    options = config.options
    analytic = gateaux(sys, u, v, w, mode=VARIATIONAL)
    fd = gateaux(sys, u, v, w, mode=FINITE_DIFFERENCE, rho=options.get('rho', 1e-2))
    sigmas = options.get('sigmas', 3.0)
    tolerance = (sigmas * np.hypot(analytic.std_err, fd.std_err)
                 + config.grid.dt * max(1.0, abs(analytic.value)))
    verdicts = {'modes_agree': bool(abs(analytic.value - fd.value) <= tolerance)}
    estimates = {
        'gateaux_variational': {'mean': analytic.value, 'std_err': analytic.std_err,
                                'n_paths': w.n_paths, 'seed': w.seed},
        'gateaux_finite_difference': {'mean': fd.value, 'std_err': fd.std_err,
                                      'n_paths': w.n_paths, 'seed': w.seed},
    }
    tables = {}
    if options.get('directions'):
        bank = direction_bank(config.grid, options['directions'], config.seed + 1,
                              dim=sys.control_dim)
        report = variational_inequality_check(sys, u, bank, w, mode=options.get('mode',
                                                                                 VARIATIONAL))
        verdicts['variational_inequality'] = report.passed
        tables['gateaux'] = [['direction', e.index, e.value, e.std_err] for e in report.entries]
    if options.get('maximum_condition'):
        mc = maximum_condition(sys, u, w, degree=config.degree)
        verdicts['maximum_condition'] = mc.passed
        tables['residual'] = _rows('residual', mc.times, mc.residual, mc.residual_std_err)
    return verdicts, estimates, tables, {'tolerance': float(tolerance)}


def run_absde_solve(config, out):
    sys, u = _problem(config)
    w = _ensemble(config)
    adj = solve_adjoint(sys, u, w, degree=config.degree)
    grid = config.grid
    options = config.options
    tolerance = options.get('tolerance', 1e-8)
    verdicts = {}
    if 'expect_p' in options:
        verdicts['p_matches'] = bool(np.max(np.abs(adj.p - options['expect_p'])) <= tolerance)
    if 'expect_q' in options:
        verdicts['q_matches'] = bool(np.max(np.abs(adj.q - options['expect_q'])) <= tolerance)
    tables = {'p': _mean_rows('p', grid.times, adj.p[..., 0]),
              'q': _mean_rows('q', grid.times, adj.q[..., 0])}
    details = {'deterministic': adj.deterministic, 'max_condition': adj.max_condition,
               'p_range': [float(adj.p.min()), float(adj.p.max())],
               'q_range': [float(adj.q.min()), float(adj.q.max())]}
    if out is not None:
        _atomic_write(Path(out) / 'adjoint.csv', lambda fh: write_adjoint_csv(adj, fh))
    return verdicts, {}, tables, details


def random_linear_system(grid, rng):
    """Linear instance with ψ1 = 0, used to exercise the duality identity."""
    def draw(scale):
        return float(rng.uniform(-scale, scale))

    drift = LinearCoefficients(**{a: draw(0.5) for a in
                                  ('x', 'y', 'z', 'kappa', 'u', 'mu', 'nu', 'lam')})
    diffusion = LinearCoefficients(**{a: draw(0.3) for a in
                                      ('x', 'y', 'z', 'u', 'mu', 'nu', 'lam')})
    running = QuadraticCost(linear={'x': draw(1.0), 'u': draw(1.0)},
                            quadratic={'x': abs(draw(1.0)), 'u': 1.0})
    terminal = QuadraticCost(linear={'x': draw(1.0)}, quadratic={'x': abs(draw(1.0))})
    return DelaySystem(
        grid=grid, drift=drift, diffusion=diffusion, running_cost=running, terminal_cost=terminal,
        phi1=KernelSpec.constant(draw(0.5)), phi2=KernelSpec.exponential(draw(0.5), -0.5),
        psi2=KernelSpec.constant(draw(0.3)), xi=draw(1.0),
    )


def run_duality_check(config, out):
    instances = config.options.get('instances', 0)
    grid = config.grid
    if instances:
        rngs = [np.random.default_rng(s)
                for s in np.random.SeedSequence(config.seed).spawn(instances)]
        problems = []
        for rng in rngs:
            sys = random_linear_system(grid, rng)
            u = ControlProcess.constant(rng.uniform(-1, 1), grid)
            v = ControlProcess.from_function(
                lambda t, a=rng.uniform(0.5, 1.5): a * np.cos(np.pi * (t - grid.t0)), grid)
            problems.append((sys, u, v))
    else:
        sys, u = _problem(config)
        problems = [(sys, u, build_control(config, sys.control_dim, 'direction'))]
    verdicts, tables, estimates = {}, {'duality': []}, {}
    for i, (sys, u, v) in enumerate(problems):
        report = duality_check(sys, u, v, _ensemble(config, offset=i))
        verdicts[f'instance_{i}'] = report.passed
        tables['duality'] += [['lhs', i, report.lhs, report.lhs_std_err],
                              ['rhs', i, report.rhs, report.rhs_std_err]]
        estimates[f'lhs_{i}'] = {'mean': report.lhs, 'std_err': report.lhs_std_err}
        estimates[f'rhs_{i}'] = {'mean': report.rhs, 'std_err': report.rhs_std_err}
    return verdicts, estimates, tables, {}


FUNCTIONALS = {
    'W(T)': lambda config: terminal_brownian,
    'W(T)^2': lambda config: terminal_brownian_squared,
    'x(T)': lambda config: TerminalState(*_problem(config)),
}


def run_clark_ocone(config, out):
    w = _ensemble(config)
    max_error = config.options.get('max_relative_error', 0.05)
    verdicts, estimates, details = {}, {}, {}
    for name in config.options.get('functionals', ['W(T)', 'W(T)^2']):
        if name not in FUNCTIONALS:
            raise DelayToolkitError(f'unknown functional {name!r}')
        report = clark_ocone_check(FUNCTIONALS[name](config), w, degree=config.degree,
                                   eps=config.options.get('eps'))
        verdicts[f'{name} reconstruction'] = report.relative_error <= max_error
        verdicts[f'{name} isometry'] = report.isometry_passed
        estimates[f'{name} isometry'] = {'mean': report.isometry_lhs,
                                         'std_err': report.isometry_lhs_std_err}
        estimates[f'{name} variance'] = {'mean': report.variance,
                                         'std_err': report.variance_std_err}
        details[name] = dataclasses.asdict(report)
    return verdicts, estimates, {}, details


def run_lq_verify(config, out):
    spec = build_lq_spec(config)
    options = config.options
    w = _ensemble(config)
    rhos = tuple(options.get('rhos', DEFAULT_RHOS))
    n_directions = options.get('directions', 20)
    candidates = {'formula': lq_closed_form(spec), 'stated': stated_special_case(spec)}
    wanted = options.get('candidates', list(candidates))
    outcome, tables, estimates = {}, {}, {}
    for name in wanted:
        report = lq_verify_optimality(spec, candidates[name], w, n_directions=n_directions,
                                      rhos=rhos)
        outcome[name] = report.passed
        estimates[f'J_{name}'] = {'mean': report.base_cost, 'std_err': report.base_std_err}
        tables[f'J_{name}'] = [[f'{name}/v{index}', rho, mean, se]
                               for index, rho, mean, se in report.series()]
    winners = [name for name, passed in outcome.items() if passed]
    verdicts = {'exactly_one_candidate_passes': len(winners) == 1} if len(wanted) > 1 else {
        f'{wanted[0]}_passes': bool(winners)}
    details = {'candidates': outcome, 'winner': winners[0] if len(winners) == 1 else None}
    best = candidates[winners[0]] if len(winners) == 1 else candidates[wanted[0]]
    tables['u_star'] = _rows('u_star', config.grid.times, best.values[0, :, 0])

    if options.get('maximum_condition', True):
        sys = lq_system(spec)
        at_best = maximum_condition(sys, best, w, degree=config.degree)
        verdicts['maximum_condition'] = at_best.passed
        tables['residual'] = _rows('optimum', at_best.times, at_best.residual,
                                   at_best.residual_std_err)
        shift = options.get('shift', 1.0)
        moved = maximum_condition(sys, dataclasses.replace(best, values=best.values + shift), w,
                                  degree=config.degree)
        interior = moved.residual[1:-1] if moved.residual.size > 2 else moved.residual
        verdicts['shifted_control_detected'] = bool(np.min(interior) >= 1.0 - moved.tolerance)
        tables['residual'] += _rows('shifted', moved.times, moved.residual,
                                    moved.residual_std_err)
        details['max_residual'] = at_best.max_residual
        details['shifted_min_residual'] = float(np.min(interior))
    return verdicts, estimates, tables, details


def run_nash_check(config, out):
    game_data = config.data.get('game', {})
    specs = [build_lq_spec(config, section=f'game.{p}', data=game_data.get(p, {}))
             for p in ('player1', 'player2')]
    game = glue_lq_game(*specs)
    w = _ensemble(config)
    options = config.options
    n_directions = options.get('directions', 20)
    rhos = tuple(options.get('rhos', DEFAULT_RHOS))
    verdicts, details = {}, {}
    for verdict in nash_check(game, w, n_directions=n_directions, rhos=rhos):
        verdicts[f'player{verdict.player}_nash'] = verdict.passed
        details[f'player{verdict.player}'] = dataclasses.asdict(verdict)
    player = options.get('perturb_player')
    if player:
        amount = options.get('perturb_amount', 0.5)
        shift = np.zeros(game.system.control_dim)
        shift[game.slices[player - 1]] = amount
        moved = game.with_candidate(dataclasses.replace(game.candidate,
                                                        values=game.candidate.values + shift))
        perturbed = nash_check(moved, w, n_directions=n_directions, rhos=rhos)
        verdicts['perturbation_isolated'] = all(
            v.passed == (v.player != player) for v in perturbed)
        details['perturbed'] = [dataclasses.asdict(v) for v in perturbed]
    return verdicts, {}, {}, details


RUNNERS = {
    'simulate': run_simulate,
    'svie-check': run_svie_check,
    'cost': run_cost,
    'grad-check': run_grad_check,
    'absde-solve': run_absde_solve,
    'duality-check': run_duality_check,
    'clark-ocone': run_clark_ocone,
    'lq-verify': run_lq_verify,
    'nash-check': run_nash_check,
}


def run(subcommand, config, out=None, record=False):
    """Run one subcommand; findings are reported, toolkit errors propagate."""
    if subcommand not in RUNNERS:
        raise ValueError(f'unknown subcommand {subcommand!r}; choose from '
                         f'{", ".join(name for name, _ in SUBCOMMANDS)}')
    logger.info('%s: %d paths, %d steps, seed %d', subcommand, config.n_paths,
                config.grid.n_steps, config.seed)
    start = time.perf_counter()
    try:
        verdicts, estimates, tables, details = RUNNERS[subcommand](config, out)
    except DelayToolkitError:
        if record:
            ExperimentRun.objects.create(subcommand=subcommand, status='ER', seed=config.seed,
                                         n_paths=config.n_paths, config=config.echo())
        raise
    report = RunReport(
        subcommand=subcommand,
        status=PASS if all(verdicts.values()) else FINDING,
        verdicts=_plain(verdicts),
        estimates=_plain(estimates),
        tables=_plain(tables),
        details=_plain(details),
        config=config.echo(),
        seed=config.seed,
        n_paths=config.n_paths,
        wall_time=time.perf_counter() - start,
    )
    logger.info('%s finished in %.1fs: %s', subcommand, report.wall_time, report.status)
    if out is not None:
        _atomic_write(Path(out) / 'report.json', lambda fh: fh.write(report.to_json()))
        emit_plot_data(report, out)
    if record:
        entry = ExperimentRun(subcommand=subcommand, status='PA' if report.passed else 'FI',
                              seed=config.seed, n_paths=config.n_paths, config=config.echo(),
                              report=json.loads(report.to_json()), wall_time=report.wall_time)
        entry.full_clean()
        entry.save()
    return report


def rerun(report):
    """Execute a report again from its embedded config echo."""
    config = load_config(text=report.config['text'], overrides=report.config['overrides'])
    return run(report.subcommand, config)


def emit_plot_data(report, out):
    """One long-format CSV per table: series, x, y, y_stderr."""
    paths = []
    for name, rows in report.tables.items():
        path = Path(out) / f'{report.subcommand}-{name}.csv'

        def write(fh, rows=rows):
            writer = csv.writer(fh)
            writer.writerow(PLOT_HEADER)
            for series, x, y, se in rows:
                writer.writerow([series, repr(float(x)), repr(float(y)), repr(float(se))])

        _atomic_write(path, write)
        paths.append(path)
    return paths
