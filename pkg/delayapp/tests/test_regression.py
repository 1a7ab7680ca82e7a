import numpy as np
from django.test import SimpleTestCase, override_settings
from numpy.testing import assert_allclose

from delayapp.exceptions import IllConditionedRegression
from delayapp.grid import make_grid, sample_brownian
from delayapp.regression import (
    FeatureCache, conditional_expectation, martingale_increment, polynomial_basis,
)


class RegressionTests(SimpleTestCase):
    """Tests for least-squares conditional expectations"""

    def setUp(self):
        self.grid = make_grid(0.0, 1.0, 20, 0.0)
        self.w = sample_brownian(self.grid, 5000, 10)
        self.features = FeatureCache(self.w)

    def test_polynomial_target_is_reproduced(self):
        """Test that a cubic of W(t_k) is its own conditional expectation"""
        basis = self.features(10)
        brownian = basis[:, 0]
        target = 1.0 + brownian - 2.0 * brownian ** 3
        fitted, condition = conditional_expectation(basis, target, degree=3)
        assert_allclose(fitted, target, rtol=1e-3, atol=1e-3)
        self.assertGreaterEqual(condition, 1.0)

    def test_constant_features_give_the_mean(self):
        """Test the constant-only basis at t0"""
        basis = self.features(0)
        target = np.arange(self.w.n_paths, dtype=float)
        fitted, condition = conditional_expectation(basis, target)
        assert_allclose(fitted, target.mean())
        self.assertEqual(condition, 1.0)

    def test_duplicate_columns_are_dropped(self):
        """Test that affinely dependent features add no basis columns"""
        basis = self.features(5)
        doubled = np.concatenate([basis, 3.0 * basis + 1.0], axis=1)
        self.assertEqual(polynomial_basis(doubled, 2).shape, polynomial_basis(basis, 2).shape)

    def test_multi_column_targets(self):
        """Test that several targets share one solve"""
        basis = self.features(7)
        targets = np.stack([basis[:, 0], basis[:, 0] ** 2], axis=1)
        fitted, _ = conditional_expectation(basis, targets, degree=2)
        assert_allclose(fitted, targets, rtol=1e-3, atol=1e-3)

    @override_settings(DELAY_TOOLKIT={'MAX_CONDITION': 10.0})
    def test_ill_conditioned_regression(self):
        """Test that a condition number above the limit raises"""
        with self.assertRaises(IllConditionedRegression) as ctx:
            conditional_expectation(self.features(10), self.features(10)[:, 0], degree=3)
        self.assertGreater(ctx.exception.condition_number, 10.0)

    def test_martingale_increment_of_next_value(self):
        """Test E[(W_{k+1} - W_k) ΔW_k | F_k] / dt close to 1"""
        k = 8
        basis = self.features(k)
        nxt = self.w.paths()[:, k + 1]
        mean, _ = conditional_expectation(basis, nxt, degree=2)
        z, _ = martingale_increment(basis, nxt, mean, self.w.increments[:, k], self.grid.dt,
                                    degree=2)
        self.assertLess(abs(np.mean(z) - 1.0), 0.1)

    def test_bare_features(self):
        """Test that without a trajectory the features are W(t_k) alone"""
        self.assertEqual(self.features(3).shape, (self.w.n_paths, 1))
