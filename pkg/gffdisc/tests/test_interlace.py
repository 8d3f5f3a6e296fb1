"""
Tests for Random Interlacements

Tests trace sampling, walk counts, occupation frequencies and the disconnection
estimates of vacant sets and walk ranges.
"""
import math

import numpy as np
from django.test import SimpleTestCase

from gffdisc.exceptions import GeometryError, InvalidArgumentError
from gffdisc.interlace import (
    anchor_measure,
    coupling_order_check,
    occupation_frequency,
    origin_hitting_probability,
    poisson_goodness_of_fit,
    sample_interlacement_trace,
    srw_disconnection_prob,
    truncation_bias,
    vacant_disconnection_curve,
    walk_counts,
)
from gffdisc.lattice import BoxSpec, Window
from gffdisc.potential import box_capacity

G0_3D = 1.516386059151978
ORIGIN = [(0, 0, 0)]


class AnchorTests(SimpleTestCase):
    """Test the normalized equilibrium measure of anchor sets."""

    def test_single_site(self):
        """Test ē = δ_0 and cap({0}) = 1/g(0)."""
        support, probs, cap = anchor_measure(ORIGIN)
        self.assertEqual(support.tolist(), [[0, 0, 0]])
        self.assertAlmostEqual(probs[0], 1.0)
        self.assertAlmostEqual(cap, 1 / G0_3D, places=6)

    def test_box_measure_sums_to_one(self):
        """Test that ē_K of a box is a probability on its inner boundary."""
        support, probs, cap = anchor_measure(BoxSpec.ball(1).points())
        self.assertAlmostEqual(probs.sum(), 1.0)
        self.assertTrue((np.abs(support).max(axis=1) == 1).all())
        self.assertAlmostEqual(cap, box_capacity(1), places=6)


class TraceTests(SimpleTestCase):
    """Test single draws of the interlacement trace."""

    def test_anchor_outside_window(self):
        """Test that an anchor set outside the window is rejected."""
        with self.assertRaises(GeometryError):
            sample_interlacement_trace(1.0, [(5, 0, 0)], Window.ball(2), 3.0, np.random.default_rng(0))

    def test_invalid_arguments(self):
        """Test that u <= 0 and a guard factor below 2 are rejected."""
        rng = np.random.default_rng(0)
        with self.assertRaises(InvalidArgumentError):
            sample_interlacement_trace(0.0, ORIGIN, Window.ball(2), 3.0, rng)
        with self.assertRaises(InvalidArgumentError):
            sample_interlacement_trace(1.0, ORIGIN, Window.ball(2), 1.5, rng)
        with self.assertRaises(InvalidArgumentError):
            walk_counts(-1.0, ORIGIN, 10, 0)

    def test_trace_and_vacant_set(self):
        """Test that the origin is occupied exactly when some walk was drawn."""
        window = Window.ball(2)
        for seed in range(10):
            trace = sample_interlacement_trace(1.0, ORIGIN, window, 3.0, np.random.default_rng(seed))
            self.assertEqual(bool(trace.occupied[2, 2, 2]), trace.walks > 0)
            self.assertTrue((trace.vacant.mask == ~trace.occupied).all())
            self.assertEqual(trace.bias, truncation_bias(window, 3.0))

    def test_truncation_bias_shrinks(self):
        """Test that a larger guard box lowers the truncation bias."""
        window = Window.ball(2)
        self.assertLess(truncation_bias(window, 6.0), truncation_bias(window, 3.0))
        self.assertLess(truncation_bias(window, 3.0), 1.0)


class WalkCountTests(SimpleTestCase):
    """Test the Poisson law of the number of walks."""

    def test_counts_are_poisson(self):
        """Test mean and chi-square fit of Poisson(u cap(K))."""
        K = BoxSpec.ball(1).points()
        counts = walk_counts(2.0, K, 3000, seed=9, workers=1)
        expected = 2.0 * box_capacity(1)
        fit = poisson_goodness_of_fit(counts, expected)
        self.assertLess(abs(fit.mean - expected), 4 * math.sqrt(expected / 3000))
        self.assertGreater(fit.p_value, 1e-3)
        self.assertGreaterEqual(fit.bins, 3)

    def test_too_few_bins(self):
        """Test that a fit with fewer than two usable bins is rejected."""
        with self.assertRaises(InvalidArgumentError):
            poisson_goodness_of_fit(np.zeros(3, dtype=np.int64), 0.01)


class OccupationTests(SimpleTestCase):
    """Test P[x ∈ I^u] = 1 - exp(-u / g(0))."""

    def test_origin_anchor(self):
        """Test the origin frequency seen from K = {0}."""
        estimate = occupation_frequency(0.5, ORIGIN, ORIGIN, Window.ball(0), 4.0, 4000, seed=1, workers=1)[0]
        expected = origin_hitting_probability(0.5)
        self.assertAlmostEqual(expected, 1 - math.exp(-0.5 / G0_3D))
        self.assertLess(abs(estimate.mean - expected), 4 * estimate.stderr)

    def test_box_anchor(self):
        """Test the origin frequency seen from K = B_1, within 4 sigma plus the truncation bias."""
        window = Window.ball(2)
        estimate = occupation_frequency(0.5, ORIGIN, BoxSpec.ball(1).points(), window, 4.0,
                                        3000, seed=2, workers=1)[0]
        slack = 4 * estimate.stderr + truncation_bias(window, 4.0)
        self.assertLess(abs(estimate.mean - origin_hitting_probability(0.5)), slack)


class DisconnectionTests(SimpleTestCase):
    """Test vacant-set and walk-range disconnection."""

    def test_vacant_curve_nondecreasing(self):
        """Test that thinning makes the vacant estimates nondecreasing in u."""
        curve = vacant_disconnection_curve([0.5, 2.0, 8.0, 32.0], 2, 2.0, 2.0, 40, seed=3, workers=1)
        means = [e.mean for e in curve]
        self.assertEqual(means, sorted(means))
        self.assertTrue(all(e.n == 40 for e in curve))

    def test_srw_paired_in_guard(self):
        """Test that a larger guard box only grows the walk range."""
        small = srw_disconnection_prob(2, 2.0, 2.0, 60, seed=4, workers=1)
        large = srw_disconnection_prob(2, 2.0, 4.0, 60, seed=4, workers=1)
        self.assertLessEqual(small.mean, large.mean)

    def test_srw_guard_factor(self):
        """Test that a guard factor below 2 is rejected."""
        with self.assertRaises(InvalidArgumentError):
            srw_disconnection_prob(2, 2.0, 1.0, 10, seed=0)

    def test_coupling_orders(self):
        """Test both orderings of disconnection probabilities at u = 0.5."""
        report = coupling_order_check(0.5, 2, 2.0, 60, seed=5, workers=1)
        self.assertAlmostEqual(report.alpha, 1.0)
        self.assertAlmostEqual(report.factor, 1 / origin_hitting_probability(0.5))
        self.assertTrue(report.gff_order_holds)
        self.assertTrue(report.srw_order_holds)
