import numpy as np
from django.test import SimpleTestCase, override_settings
from numpy.testing import assert_allclose, assert_array_equal

from delayapp.exceptions import InvalidHorizon, NonCommensurateDelay
from delayapp.grid import make_grid, paired_ensembles, sample_brownian


class TimeGridTests(SimpleTestCase):
    """Tests for make_grid and TimeGrid"""

    def test_grid_steps_and_delay(self):
        """Test dt and the delay in grid steps"""
        grid = make_grid(0.0, 1.0, 100, 0.1)
        self.assertAlmostEqual(grid.dt, 0.01)
        self.assertEqual(grid.delay_steps, 10)
        self.assertAlmostEqual(grid.delta, 0.1)
        self.assertEqual(grid.times.shape, (101,))
        self.assertAlmostEqual(grid.times[-1], 1.0)

    def test_grid_rejects_empty_horizon(self):
        """Test that T must lie after t0"""
        with self.assertRaises(InvalidHorizon):
            make_grid(1.0, 1.0, 10, 0.0)
        with self.assertRaises(InvalidHorizon):
            make_grid(0.0, 1.0, 0, 0.0)

    def test_grid_rejects_non_commensurate_delay(self):
        """Test that the delay must be a whole number of steps"""
        with self.assertRaises(NonCommensurateDelay):
            make_grid(0.0, 1.0, 100, 0.015)

    def test_index_of_grid_time(self):
        """Test index() on and off the grid"""
        grid = make_grid(0.5, 1.5, 10, 0.2)
        self.assertEqual(grid.index(grid.time(7)), 7)
        with self.assertRaises(ValueError):
            grid.index(0.55)


class BrownianEnsembleTests(SimpleTestCase):
    """Tests for seeded Brownian ensembles"""

    def setUp(self):
        self.grid = make_grid(0.0, 1.0, 50, 0.1)

    def test_same_seed_same_noise(self):
        """Test that a seed fixes the increments bit for bit"""
        first = sample_brownian(self.grid, 200, 12)
        second = sample_brownian(self.grid, 200, 12)
        assert_array_equal(first.increments, second.increments)
        self.assertFalse(np.array_equal(first.increments,
                                        sample_brownian(self.grid, 200, 13).increments))

    @override_settings(DELAY_TOOLKIT={'PATH_BLOCK': 3})
    def test_blocks_do_not_depend_on_path_count(self):
        """Test that the first block of paths is the same whatever the ensemble size"""
        small = sample_brownian(self.grid, 3, 5)
        large = sample_brownian(self.grid, 8, 5)
        assert_array_equal(small.increments, large.increments[:3])

    def test_increments_are_read_only(self):
        """Test that the noise cannot be edited in place"""
        w = sample_brownian(self.grid, 10, 1)
        with self.assertRaises(ValueError):
            w.increments[0, 0] = 1.0

    def test_paths_start_at_zero_with_unit_variance_rate(self):
        """Test W(t0) = 0 and Var W(T) close to T"""
        w = sample_brownian(self.grid, 10000, 3)
        brownian = w.paths()
        assert_array_equal(brownian[:, 0], 0.0)
        self.assertLess(abs(np.var(brownian[:, -1]) - 1.0), 0.07)

    def test_increment_moments(self):
        """Test mean 0 and variance dt of 10^6 increments within five standard errors"""
        grid = make_grid(0.0, 1.0, 100, 0.1)
        incs = sample_brownian(grid, 10000, 19).increments
        count = incs.size
        self.assertLessEqual(abs(incs.mean()), 5 * np.sqrt(grid.dt / count))
        self.assertLessEqual(abs(incs.var() - grid.dt), 5 * grid.dt * np.sqrt(2 / count))
        self.assertTrue(0.0097 <= incs.var() <= 0.0103)

    def test_bumped_moves_one_increment(self):
        """Test that bumped() shifts a single column"""
        w = sample_brownian(self.grid, 4, 2)
        bumped = w.bumped(7, 0.5)
        diff = bumped.increments - w.increments
        assert_allclose(diff[:, 7], 0.5)
        self.assertEqual(np.count_nonzero(diff), 4)

    def test_rejects_empty_ensemble(self):
        """Test that at least one path is needed"""
        with self.assertRaises(ValueError):
            sample_brownian(self.grid, 0, 1)

    def test_paired_ensembles_share_noise(self):
        """Test that the paired handle carries the same increments"""
        w = sample_brownian(self.grid, 5, 9)
        self.assertIs(paired_ensembles(w).increments, w.increments)
