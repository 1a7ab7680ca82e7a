import dataclasses

import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose, assert_array_equal

from delayapp.grid import make_grid, sample_brownian
from delayapp.kernels import KernelSpec
from delayapp.sdde import simulate
from delayapp.system import CallableCoefficients, ControlProcess, LinearCoefficients, QuadraticCost
from delayapp.variation import (
    build_svie, delay_indicator, expansion_gap, fitted_order, linearize, simulate_svie,
    simulate_svie_blocks, simulate_variational, svie_discrepancy, variational_system,
)

from .factories import linear_system, small_grid


def quadratic_drift(t, x, y, z, kappa, u, mu, nu, lam):
    return 0.1 * x + 0.5 * x ** 2 + u + 0.5 * mu


class ExpansionTests(SimpleTestCase):
    """Tests for the first-order expansion of the state in the control"""

    def setUp(self):
        self.grid = small_grid(steps=40)
        self.w = sample_brownian(self.grid, 400, 31)
        self.u = ControlProcess.constant(0.2, self.grid)
        self.v = ControlProcess.from_function(lambda t: np.cos(np.pi * t), self.grid)

    def test_linear_system_expansion_is_exact(self):
        """Test gap <= 1e-10 for every ρ on a linear system with all memories"""
        sys = linear_system(
            self.grid,
            drift=LinearCoefficients(x=0.2, y=0.1, z=0.3, kappa=0.1, u=1.0, mu=0.5, nu=0.2,
                                     lam=0.1),
            diffusion=LinearCoefficients(x=0.1, kappa=0.2, u=0.1),
            phi1=KernelSpec.exponential(0.5, -1.0), psi1=KernelSpec.constant(0.3),
            phi2=KernelSpec.constant(0.4), psi2=KernelSpec.constant(0.2),
        )
        gaps = expansion_gap(sys, self.u, self.v, [0.4, 0.2, 0.1, 0.05], self.w)
        self.assertLessEqual(max(g.gap for g in gaps), 1e-10)

    def test_quadratic_drift_gap_shrinks(self):
        """Test that the gap strictly decreases with ρ and drops tenfold over the ladder"""
        sys = linear_system(self.grid, drift=CallableCoefficients(quadratic_drift), xi=0.5)
        gaps = [g.gap for g in expansion_gap(sys, self.u, self.v, [0.4, 0.2, 0.1, 0.05],
                                             self.w)]
        self.assertTrue(all(b < a for a, b in zip(gaps, gaps[1:])))
        self.assertLessEqual(gaps[-1], gaps[0] / 10)

    def test_rho_outside_unit_interval(self):
        """Test that ρ must lie in (0, 1]"""
        sys = linear_system(self.grid)
        with self.assertRaises(ValueError):
            expansion_gap(sys, self.u, self.v, [0.0], self.w)
        with self.assertRaises(ValueError):
            expansion_gap(sys, self.u, self.v, [1.5], self.w)

    def test_variational_path_starts_at_zero(self):
        """Test x̂(t0) = 0 and a zero initial segment for μ̂"""
        sys = linear_system(self.grid)
        vs, _ = variational_system(sys, self.u, self.v, self.w)
        xhat = simulate_variational(vs, self.w)
        assert_allclose(xhat.x[:, 0], 0.0)
        assert_allclose(xhat.mu[0, :self.grid.delay_steps], 0.0)


class LinearizationTests(SimpleTestCase):
    """Tests for derivative stacks along a candidate"""

    def setUp(self):
        self.grid = small_grid()
        self.w = sample_brownian(self.grid, 20, 2)
        self.u = ControlProcess.constant(0.1, self.grid)

    def test_linear_costs_give_deterministic_derivatives(self):
        """Test that linear data keeps a single leading row"""
        sys = linear_system(self.grid, running_cost=QuadraticCost(linear={'x': 1.0}),
                            terminal_cost=QuadraticCost(linear={'x': 1.0}))
        lin = linearize(sys, simulate(sys, self.u, self.w), self.u)
        self.assertTrue(lin.deterministic)
        self.assertEqual(lin.row('drift', 3).shape, (1, 1, 4))

    def test_quadratic_terminal_is_path_dependent(self):
        """Test that h_x = x(T) varies by path"""
        sys = linear_system(self.grid)
        lin = linearize(sys, simulate(sys, self.u, self.w), self.u)
        self.assertFalse(lin.deterministic)
        self.assertEqual(lin.terminal_row().shape, (20, 4))

    def test_callable_derivative_by_differences(self):
        """Test the central-difference derivative of a callable drift"""
        sys = linear_system(self.grid, drift=CallableCoefficients(quadratic_drift))
        traj = simulate(sys, self.u, self.w)
        lin = linearize(sys, traj, self.u)
        assert_allclose(lin.drift['x'][:, 5, 0, 0], 0.1 + traj.x[:, 5, 0], rtol=1e-6)
        assert_allclose(lin.drift['mu'][:, 5, 0, 0], 0.5, rtol=1e-6)


class VolterraFormTests(SimpleTestCase):
    """Tests for the delay-free Volterra rewrite of the variational equation"""

    def _problem(self, steps, psi1, n_paths=300, seed=5):
        grid = make_grid(0.0, 1.0, steps, 0.1)
        sys = linear_system(
            grid,
            drift=LinearCoefficients(x=0.3, y=0.2, kappa=0.3, u=1.0),
            diffusion=LinearCoefficients(x=0.3, kappa=0.4, u=0.2),
            psi1=psi1,
        )
        w = sample_brownian(grid, n_paths, seed)
        u = ControlProcess.constant(0.5, grid)
        v = ControlProcess.from_function(lambda t: np.cos(2 * np.pi * t), grid)
        vs, _ = variational_system(sys, u, v, w)
        return vs, w

    def test_rewrite_is_exact_without_memory(self):
        """Test X¹ = x̂ when φ1 and ψ1 are zero"""
        vs, w = self._problem(50, KernelSpec.zero(1))
        self.assertLessEqual(svie_discrepancy(vs, w), 1e-10)

    def test_discrepancy_shrinks_under_refinement(self):
        """Test that the Volterra/variational gap falls as dt shrinks at order one half"""
        steps = [50, 100, 200]
        errors = [svie_discrepancy(*self._problem(n, KernelSpec.constant(0.8), n_paths=2000))
                  for n in steps]
        self.assertGreater(errors[0], 0.0)
        self.assertTrue(all(b < a for a, b in zip(errors, errors[1:])))
        order = fitted_order(np.array([1.0 / n for n in steps]), np.array(errors))
        self.assertGreaterEqual(order, 0.35)
        self.assertLessEqual(order, 0.65)

    def test_block_sums_match_volterra_euler(self):
        """Test that summing 𝔸, 𝔹, ℂ, 𝔻 reproduces simulate_svie"""
        vs, w = self._problem(20, KernelSpec.constant(0.8), n_paths=30)
        svie = build_svie(vs, w)
        assert_allclose(simulate_svie_blocks(svie, w), simulate_svie(svie, w), atol=1e-10)

    def test_block_sums_with_distributed_memory(self):
        """Test the block sums against simulate_svie with φ1 set and the closed indicator"""
        grid = make_grid(0.0, 1.0, 20, 0.1)
        sys = linear_system(
            grid,
            drift=LinearCoefficients(x=0.3, y=0.2, z=0.4, kappa=0.3, u=1.0),
            diffusion=LinearCoefficients(x=0.3, z=0.1, kappa=0.4, u=0.2),
            phi1=KernelSpec.exponential(1.0, -0.5), psi1=KernelSpec.exponential(0.8, -1.0),
        )
        w = sample_brownian(grid, 25, 12)
        vs, _ = variational_system(sys, ControlProcess.constant(0.5, grid),
                                   ControlProcess.constant(1.0, grid), w)
        svie = dataclasses.replace(build_svie(vs, w), strict=False)
        assert_allclose(simulate_svie_blocks(svie, w), simulate_svie(svie, w), atol=1e-10)

    def test_zero_blocks_give_zero_state(self):
        """Test X ≡ 0 when every block vanishes"""
        vs, w = self._problem(20, KernelSpec.constant(0.8), n_paths=10)
        svie = build_svie(vs, w)
        svie = dataclasses.replace(
            svie, brow=np.zeros_like(svie.brow), srow=np.zeros_like(svie.srow),
            xib=np.zeros_like(svie.xib), xisig=np.zeros_like(svie.xisig),
        )
        assert_array_equal(simulate_svie(svie, w), 0.0)
        assert_array_equal(simulate_svie_blocks(svie, w), 0.0)

    def test_constant_forcing_integrates_linearly(self):
        """Test X¹ = c(t - t0), its delayed copy and the stochastic memory row under constant 𝔹"""
        vs, w = self._problem(20, KernelSpec.constant(0.8), n_paths=10)
        grid = vs.base.grid
        svie = build_svie(vs, w)
        svie = dataclasses.replace(
            svie, brow=np.zeros_like(svie.brow), srow=np.zeros_like(svie.srow),
            xib=np.full_like(svie.xib, 0.7), xisig=np.zeros_like(svie.xisig),
        )
        X = simulate_svie(svie, w)
        elapsed = grid.times - grid.t0
        assert_allclose(X[:, :, 0], np.broadcast_to(0.7 * elapsed, (10, grid.n_steps + 1)),
                        atol=1e-12)
        assert_allclose(X[:, :, 1], np.broadcast_to(0.7 * np.maximum(elapsed - grid.delta, 0.0),
                                                    (10, grid.n_steps + 1)), atol=1e-12)
        assert_allclose(X[:, :, 2], 0.0, atol=1e-12)
        # Σ_j E2(k,j) = Σ_{i<k} (i+1) ψ1 ΔW_i for constant ψ1
        weighted = np.cumsum(np.arange(1, grid.n_steps + 1) * w.increments, axis=1)
        expected = 0.8 * 0.7 * grid.dt * np.concatenate([np.zeros((10, 1)), weighted], axis=1)
        assert_allclose(X[:, :, 3], expected, atol=1e-12)

    def test_delayed_component_is_shifted_copy(self):
        """Test X²_k = X¹_{k-d} and X² = 0 over the first delay window"""
        vs, w = self._problem(20, KernelSpec.constant(0.8), n_paths=10)
        d = vs.base.grid.delay_steps
        X = simulate_svie(build_svie(vs, w), w)
        assert_array_equal(X[:, d:, 1], X[:, :-d, 0])
        assert_array_equal(X[:, :d, 1], 0.0)

    def test_block_parts_add_up(self):
        """Test 𝔸 = 𝔸₁ + 𝔸₂ and ℂ = ℂ₁ + ℂ₂"""
        vs, w = self._problem(20, KernelSpec.constant(0.8), n_paths=10)
        svie = build_svie(vs, w)
        assert_allclose(svie.block_A(9, 2, part=1) + svie.block_A(9, 2, part=2),
                        svie.block_A(9, 2))
        assert_allclose(svie.block_C(9, 2, part=1) + svie.block_C(9, 2, part=2),
                        svie.block_C(9, 2))
        self.assertEqual(svie.block_B(9, 2).shape, (10, 4))

    def test_delay_indicator(self):
        """Test the open and closed variants of 1_{(δ,∞)} at the boundary"""
        self.assertEqual(delay_indicator(5, 5, strict=True), 0.0)
        self.assertEqual(delay_indicator(5, 5, strict=False), 1.0)
        self.assertEqual(delay_indicator(6, 5, strict=True), 1.0)

    def test_fitted_order(self):
        """Test the log-log slope on an exact power law"""
        dts = np.array([0.02, 0.01, 0.005])
        self.assertAlmostEqual(fitted_order(dts, 3.0 * dts ** 0.5), 0.5)
