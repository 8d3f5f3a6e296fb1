"""
Tests for Monte Carlo Plumbing and Random Walks

Tests estimates, seed splitting, worker-count independence and the vectorized walks.
"""
import math

import numpy as np
from django.test import SimpleTestCase

from gffdisc.exceptions import InvalidArgumentError
from gffdisc.lattice import BoxSpec, PointIndex, Window
from gffdisc.montecarlo import McEstimate, estimate, joint_stderr, monte_carlo, task_rng
from gffdisc.walks import GeneratorSteps, StreamSteps, hit_or_escape, visited_sites


def uniform_draw(rng):
    return rng.random()


class McEstimateTests(SimpleTestCase):
    """Test the mean / stderr record."""

    def test_from_samples(self):
        """Test mean and sd/sqrt(n) of a sample."""
        est = McEstimate.from_samples([1.0, 2.0, 3.0, 4.0], seed=5)
        self.assertEqual(est.mean, 2.5)
        self.assertAlmostEqual(est.stderr, np.std([1, 2, 3, 4], ddof=1) / 2)
        self.assertEqual((est.n, est.seed), (4, 5))

    def test_single_sample_has_nan_stderr(self):
        """Test that one sample gives stderr nan."""
        self.assertTrue(math.isnan(McEstimate.from_samples([1.0], seed=0).stderr))

    def test_zero_samples_rejected(self):
        """Test that n = 0 raises InvalidArgumentError."""
        with self.assertRaises(InvalidArgumentError):
            McEstimate(0.0, 0.0, 0, 0)

    def test_row_has_no_wall_time(self):
        """Test that report rows leave out the wall time."""
        row = McEstimate(0.5, 0.1, 10, 3, wall_time=2.0).as_row('p_')
        self.assertEqual(row, {'p_mean': 0.5, 'p_stderr': 0.1, 'p_n': 10, 'p_seed': 3})

    def test_joint_stderr_of_identical_samples(self):
        """Test that paired identical samples have zero difference error."""
        self.assertEqual(joint_stderr([1.0, 2.0, 5.0], [1.0, 2.0, 5.0]), 0.0)


class SeedSplittingTests(SimpleTestCase):
    """Test per-sample streams and worker independence."""

    def test_task_streams_reproducible(self):
        """Test that the same (seed, index) gives the same stream."""
        self.assertEqual(task_rng(7, 3).random(), task_rng(7, 3).random())
        self.assertNotEqual(task_rng(7, 3).random(), task_rng(7, 4).random())

    def test_chunk_size_does_not_change_results(self):
        """Test that chunking leaves the samples unchanged."""
        a = monte_carlo(uniform_draw, 50, 11, workers=1, chunk=7)
        b = monte_carlo(uniform_draw, 50, 11, workers=1, chunk=64)
        np.testing.assert_array_equal(a, b)

    def test_worker_count_does_not_change_results(self):
        """Test bit-identical samples for one and two workers."""
        a = monte_carlo(uniform_draw, 40, 3, workers=1, chunk=8)
        b = monte_carlo(uniform_draw, 40, 3, workers=2, chunk=8)
        np.testing.assert_array_equal(a, b)

    def test_estimate_of_uniform_mean(self):
        """Test that the uniform mean is 1/2 within 4 sigma."""
        est = estimate(uniform_draw, 2000, 1, workers=1)
        self.assertLess(abs(est.mean - 0.5), 4 * est.stderr)

    def test_non_positive_sample_count_rejected(self):
        """Test that n_mc = 0 raises InvalidArgumentError."""
        with self.assertRaises(InvalidArgumentError):
            monte_carlo(uniform_draw, 0, 1)


class WalkTests(SimpleTestCase):
    """Test hitting and range computations of simple random walks."""

    def test_start_in_target_hits_at_time_zero(self):
        """Test that a walk started in the target hits immediately."""
        target = PointIndex([[0, 0, 0]])
        landing = hit_or_escape([[0, 0, 0]], target, BoxSpec.ball(5), GeneratorSteps(task_rng(0, 0), 3))
        self.assertEqual(landing.tolist(), [0])

    def test_start_outside_guard_escapes(self):
        """Test that a walk started outside the guard never moves."""
        target = PointIndex([[0, 0, 0]])
        landing = hit_or_escape([[9, 0, 0]], target, BoxSpec.ball(5), GeneratorSteps(task_rng(0, 0), 3))
        self.assertEqual(landing.tolist(), [-1])

    def test_neighbor_hits_site_about_as_often_as_theory(self):
        """Test P[a neighbor of 0 hits 0 before leaving B_30] against 1 - 1/g(0) within 4 sigma."""
        n = 400
        target = PointIndex([[0, 0, 0]])
        starts = np.tile([1, 0, 0], (n, 1))
        landing = hit_or_escape(starts, target, BoxSpec.ball(30), GeneratorSteps(task_rng(2, 0), 3))
        hits = (landing >= 0).astype(float)
        p = 1 - 1 / 1.516386059151978
        self.assertLess(abs(hits.mean() - p), 4 * math.sqrt(p * (1 - p) / n) + 0.02)

    def test_visited_sites_include_start(self):
        """Test that every walk visits its start."""
        window = Window.ball(2)
        steps = StreamSteps([task_rng(1, i) for i in range(5)], 3)
        visited = visited_sites(np.zeros((5, 3), dtype=np.int64), window, BoxSpec.ball(4), steps)
        self.assertTrue(visited[:, window.index([[0, 0, 0]])[0]].all())

    def test_stream_steps_independent_of_batch(self):
        """Test that a walk's path depends only on its own stream."""
        window = Window.ball(3)
        guard = BoxSpec.ball(5)
        alone = visited_sites([[0, 0, 0]], window, guard, StreamSteps([task_rng(4, 0)], 3))
        together = visited_sites(np.zeros((3, 3), dtype=np.int64), window, guard,
                                 StreamSteps([task_rng(4, 0), task_rng(4, 1), task_rng(4, 2)], 3))
        np.testing.assert_array_equal(alone[0], together[0])
