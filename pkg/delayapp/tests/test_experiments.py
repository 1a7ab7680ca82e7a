import tempfile
from io import StringIO
from pathlib import Path

from django.core.exceptions import ValidationError
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import TestCase

from delayapp.config import load_config
from delayapp.exceptions import DelayToolkitError
from delayapp.experiments import PLOT_HEADER, RunReport, emit_plot_data, rerun, run
from delayapp.models import ExperimentRun

SIMULATE = '''
subcommand = "simulate"

[grid]
T = 1.0
steps = 20
delta = 0.1

[monte_carlo]
paths = 50
seed = 3

[system]
xi = 1.0

[system.drift]
x = 0.2
y = 0.1
u = 1.0

[system.diffusion]
x = 0.1

[control]
kind = "constant"
value = 0.5

[options]
export_paths = 5
'''

ADJOINT = '''
subcommand = "absde-solve"

[grid]
T = 1.0
steps = 20
delta = 0.1

[monte_carlo]
paths = 40
seed = 7

[lq]
f = 2.0
g = 2.0
abar = 0.2
r1 = 1.0
r2 = 1.0
xi = 1.0

[options]
expect_p = {p}
expect_q = 0.0
'''


class ExperimentCommandTests(TestCase):
    """Tests for the experiment management command"""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.dir = Path(self.tmp.name)

    def _config(self, text, name='config.toml'):
        path = self.dir / name
        path.write_text(text)
        return str(path)

    def test_passing_run_writes_outputs(self):
        """Test that a passing run prints its verdicts and writes the report"""
        out = StringIO()
        call_command('experiment', 'absde-solve', config=self._config(ADJOINT.format(p=1.0)),
                     out=str(self.dir / 'run'), stdout=out)
        self.assertIn('p_matches: pass', out.getvalue())
        self.assertIn('absde-solve: pass', out.getvalue())
        for name in ('report.json', 'adjoint.csv', 'absde-solve-p.csv', 'absde-solve-q.csv'):
            self.assertTrue((self.dir / 'run' / name).exists(), name)

    def test_finding_exits_with_two(self):
        """Test that a finding ends the command with exit status 2"""
        with self.assertRaises(SystemExit) as ctx:
            call_command('experiment', 'absde-solve',
                         config=self._config(ADJOINT.format(p=2.0)), stdout=StringIO())
        self.assertEqual(ctx.exception.code, 2)

    def test_invalid_config_names_field(self):
        """Test that an invalid path count is reported against its field"""
        with self.assertRaisesMessage(CommandError, 'invalid config: paths'):
            call_command('experiment', 'simulate', config=self._config(SIMULATE), paths=0,
                         stdout=StringIO())

    def test_missing_config_file(self):
        """Test that an unreadable config is a command error"""
        with self.assertRaises(CommandError):
            call_command('experiment', 'simulate', config=str(self.dir / 'absent.toml'),
                         stdout=StringIO())

    def test_flag_overrides_config(self):
        """Test that --steps replaces the grid's step count"""
        config = load_config(self._config(SIMULATE), overrides={'steps': 40, 'seed': None})
        self.assertEqual(config.grid.n_steps, 40)
        self.assertEqual(config.seed, 3)
        self.assertEqual(config.echo()['overrides'], {'steps': 40})

    def test_record_stores_run(self):
        """Test that --record stores one passing run"""
        call_command('experiment', 'absde-solve', config=self._config(ADJOINT.format(p=1.0)),
                     record=True, stdout=StringIO())
        entry = ExperimentRun.objects.get()
        self.assertEqual(entry.status, 'PA')
        self.assertEqual(entry.seed, 7)
        self.assertEqual(entry.report['verdicts'], {'p_matches': True, 'q_matches': True})


class RunReportTests(TestCase):
    """Tests for reports, reruns and plot data"""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.dir = Path(self.tmp.name)
        self.config = load_config(text=SIMULATE)

    def test_json_round_trip(self):
        """Test that a report survives JSON"""
        report = run('simulate', self.config)
        restored = RunReport.from_json(report.to_json())
        self.assertEqual(restored.to_json(), report.to_json())
        self.assertTrue(restored.passed)

    def test_reproducible_outputs(self):
        """Test byte-identical tables and trajectories for one seed"""
        run('simulate', self.config, out=self.dir / 'a')
        run('simulate', self.config, out=self.dir / 'b')
        for name in ('simulate-state.csv', 'trajectory.csv'):
            self.assertEqual((self.dir / 'a' / name).read_bytes(),
                             (self.dir / 'b' / name).read_bytes())

    def test_rerun_matches(self):
        """Test that rerunning from the config echo gives the same estimates"""
        report = run('simulate', self.config)
        self.assertEqual(rerun(report).estimates, report.estimates)

    def test_empty_table_has_header(self):
        """Test that an empty table still gets its header row"""
        report = run('simulate', self.config)
        report.tables = {'empty': []}
        (path,) = emit_plot_data(report, self.dir)
        self.assertEqual(path.read_text().strip(), ','.join(PLOT_HEADER))

    def test_unknown_subcommand(self):
        """Test that run refuses an unknown subcommand"""
        with self.assertRaises(ValueError):
            run('optimise', self.config)

    def test_error_is_recorded(self):
        """Test that a toolkit error is stored with the error status"""
        config = load_config(text=SIMULATE + 'functionals = ["x(T)^3"]\n')
        with self.assertRaises(DelayToolkitError):
            run('clark-ocone', config, record=True)
        entry = ExperimentRun.objects.get()
        self.assertEqual(entry.status, 'ER')
        self.assertIsNone(entry.report)


class ExperimentRunModelTests(TestCase):
    """Tests for the stored run model"""

    def test_finished_run_needs_report(self):
        """Test that a passing run without its report does not validate"""
        entry = ExperimentRun(subcommand='cost', status='PA', seed=1, n_paths=10, config={})
        with self.assertRaises(ValidationError) as ctx:
            entry.full_clean()
        self.assertIn('report', ctx.exception.message_dict)

    def test_str(self):
        """Test the display string"""
        entry = ExperimentRun(subcommand='cost', status='FI', seed=4, n_paths=10, config={})
        self.assertEqual(str(entry), 'cost seed=4 (Finding)')
