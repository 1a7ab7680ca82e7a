import dataclasses

import numpy as np
from django.test import SimpleTestCase, override_settings
from numpy.testing import assert_allclose

from delayapp.cost import evaluate_cost
from delayapp.exceptions import UnsupportedRegime, ZeroDenominator
from delayapp.grid import sample_brownian
from delayapp.hamiltonian import maximum_condition
from delayapp.kernels import KernelSpec
from delayapp.lq import (
    DEFAULT_RHOS, LqSpec, direction_bank, glue_lq_game, lq_closed_form, lq_system,
    lq_verify_optimality, nash_check, stated_special_case, verify_optimality,
)
from delayapp.system import ControlProcess

from .factories import linear_system, lq_spec, small_grid


class ClosedFormTests(SimpleTestCase):
    """Tests for the closed-form optimal control"""

    def setUp(self):
        self.grid = small_grid()
        self.N = self.grid.n_steps

    def _tail(self, k):
        return (self.N - 1 - k) * self.grid.dt

    def test_values_with_windowed_denominator(self):
        """Test u*_k = -(1 + T - t_k - dt) while t_k + δ is inside the horizon"""
        u = lq_closed_form(lq_spec(self.grid), denominator='windowed').values[0, :self.N, 0]
        k = np.arange(self.N)
        active = k + self.grid.delay_steps <= self.N - 1
        expected = np.where(active, -(1 + self._tail(k)), -(1 + 2 * self._tail(k)))
        assert_allclose(u, expected, atol=1e-12)

    def test_values_with_literal_denominator(self):
        """Test that the literal reading halves the inactive tail"""
        u = lq_closed_form(lq_spec(self.grid), denominator='literal').values[0, :self.N, 0]
        for k in (self.N - 2, self.N - 1):
            self.assertAlmostEqual(u[k], -(0.5 + self._tail(k)))
        self.assertAlmostEqual(u[0], -(1 + self._tail(0)))

    @override_settings(DELAY_TOOLKIT={'LQ_DENOMINATOR': 'literal'})
    def test_denominator_from_settings(self):
        """Test that the setting picks the reading when none is passed"""
        u = lq_closed_form(lq_spec(self.grid)).values[0, self.N - 1, 0]
        self.assertAlmostEqual(u, -0.5)

    def test_unknown_denominator(self):
        """Test that an unknown reading is refused"""
        with self.assertRaises(ValueError):
            lq_closed_form(lq_spec(self.grid), denominator='shifted')

    def test_pure_control_cost(self):
        """Test u* = -1/2 for f = r1 = 1 and nothing else"""
        u = lq_closed_form(LqSpec(grid=self.grid, f=1.0))
        assert_allclose(u.values, -0.5)

    def test_zero_denominator(self):
        """Test that r1 = 0 fails where the delayed weight is switched off"""
        spec = LqSpec(grid=self.grid, f=1.0, r1=0.0, r2=1.0)
        with self.assertRaises(ZeroDenominator):
            lq_closed_form(spec, denominator='windowed')
        u = lq_closed_form(spec, denominator='literal')
        self.assertTrue(np.all(np.isfinite(u.values)))

    def test_negative_weight(self):
        """Test that a negative cost weight is refused"""
        with self.assertRaises(ValueError):
            LqSpec(grid=self.grid, r1=-1.0)

    def test_path_indexed_k_with_psi2(self):
        """Test that a path-indexed k is refused once ψ2 is non-zero"""
        spec = LqSpec(grid=self.grid, k=np.ones((3, self.N + 1)), psi2=KernelSpec.constant(1.0))
        self.assertTrue(spec.k_path_indexed)
        with self.assertRaises(UnsupportedRegime):
            lq_closed_form(spec)

    def test_stated_special_case(self):
        """Test u(t) = T - t + 1"""
        u = stated_special_case(lq_spec(self.grid))
        assert_allclose(u.values[0, :, 0], self.grid.T - self.grid.times + 1)

    def test_cost_gap_between_zero_and_optimum(self):
        """Test J(0) - J(-1/2) = T/4 without noise in the state"""
        spec = LqSpec(grid=self.grid, f=1.0, xi=1.0)
        sys = lq_system(spec)
        w = sample_brownian(self.grid, 10, 0)
        zero = evaluate_cost(sys, ControlProcess.constant(0.0, self.grid), w)
        optimum = evaluate_cost(sys, lq_closed_form(spec), w)
        self.assertAlmostEqual(zero.mean - optimum.mean, self.grid.T / 4)


class DirectionBankTests(SimpleTestCase):
    """Tests for the random perturbation directions"""

    def test_unit_sup_norm(self):
        """Test that each direction peaks at one"""
        for v in direction_bank(small_grid(), 5, seed=1):
            self.assertAlmostEqual(np.max(np.abs(v.values)), 1.0)

    def test_deterministic_in_seed(self):
        """Test that a seed fixes the bank"""
        first = direction_bank(small_grid(), 3, seed=8, dim=2)
        second = direction_bank(small_grid(), 3, seed=8, dim=2)
        for a, b in zip(first, second):
            assert_allclose(a.values, b.values)
        self.assertEqual(first[0].values.shape[-1], 2)


class OptimalityTests(SimpleTestCase):
    """Tests for the Monte Carlo optimality verification"""

    def setUp(self):
        self.grid = small_grid()
        self.spec = lq_spec(self.grid)
        self.w = sample_brownian(self.grid, 2000, 5)

    def test_closed_form_passes(self):
        """Test that no direction improves on the closed form"""
        report = lq_verify_optimality(self.spec, lq_closed_form(self.spec), self.w,
                                      n_directions=4)
        self.assertTrue(report.passed)
        for d in report.directions:
            self.assertGreater(d.curvature, 0)
            self.assertLess(abs(d.cubic), 1e-6)
        self.assertEqual(len(report.series()), 4 * (len(DEFAULT_RHOS) + 1))

    def test_noisy_cost_curve_is_a_parabola(self):
        """Test |cubic| <= 3σ and positive curvature when the cost differences carry noise"""
        sys = linear_system(self.grid)
        directions = direction_bank(self.grid, 3, seed=4)
        report = verify_optimality(sys, ControlProcess.constant(0.2, self.grid), self.w,
                                   directions)
        for d in report.directions:
            sigma = max(d.delta_std_err)
            self.assertGreater(sigma, 0)
            self.assertGreater(d.curvature, 0)
            self.assertLessEqual(abs(d.cubic), 3 * sigma)

    def test_stated_answer_fails(self):
        """Test that T - t + 1 is improved on"""
        report = lq_verify_optimality(self.spec, stated_special_case(self.spec), self.w,
                                      n_directions=4)
        self.assertFalse(report.passed)

    def test_maximum_condition(self):
        """Test a vanishing residual at u* and a residual of the shift size at u* + 1"""
        sys = lq_system(self.spec)
        u = lq_closed_form(self.spec)
        self.assertTrue(maximum_condition(sys, u, self.w).passed)
        shifted = dataclasses.replace(u, values=u.values + 1.0)
        report = maximum_condition(sys, shifted, self.w)
        self.assertFalse(report.passed)
        self.assertGreaterEqual(report.min_residual, 2.0 - 1e-9)


class NashTests(SimpleTestCase):
    """Tests for the glued two-player game"""

    def setUp(self):
        self.grid = small_grid()
        self.w = sample_brownian(self.grid, 1000, 12)
        self.game = glue_lq_game(lq_spec(self.grid), lq_spec(self.grid, f=1.0, r2=0.5))

    def test_closed_forms_are_an_equilibrium(self):
        """Test that neither player gains by deviating from its own closed form"""
        verdicts = nash_check(self.game, self.w, n_directions=3)
        self.assertEqual([v.player for v in verdicts], [1, 2])
        self.assertTrue(all(v.passed for v in verdicts))
        self.assertTrue(all(v.max_residual <= v.residual_tolerance for v in verdicts))

    def test_perturbed_player_is_isolated(self):
        """Test that shifting player 1 is caught for player 1 only"""
        candidate = self.game.candidate
        values = candidate.values.copy()
        values[..., 0] += 0.5
        game = self.game.with_candidate(dataclasses.replace(candidate, values=values))
        first, second = nash_check(game, self.w, n_directions=3)
        self.assertFalse(first.passed)
        self.assertTrue(second.passed)

    def test_grids_must_match(self):
        """Test that instances on different grids are not glued"""
        with self.assertRaises(ValueError):
            glue_lq_game(lq_spec(self.grid), lq_spec(small_grid(steps=40)))

    def test_path_indexed_k_refused(self):
        """Test that glued games take deterministic coefficients only"""
        spec = LqSpec(grid=self.grid, k=np.ones((2, self.grid.n_steps + 1)))
        with self.assertRaises(UnsupportedRegime):
            glue_lq_game(spec, lq_spec(self.grid))
