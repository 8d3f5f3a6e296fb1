"""
Tests for Level-Set Percolation

Tests clusters, crossing and disconnection events, contours, the contour and tilt
checks, the Z-field and the coarse-graining of L-boxes.
"""
import itertools
import math
from collections import deque

import numpy as np
from django.test import SimpleTestCase

from gffdisc.exceptions import (
    EstimationError,
    GeometryError,
    InvalidArgumentError,
    InvalidConfigurationError,
)
from gffdisc.gff import Field, TiltProfile, dirichlet_energy, free_samples
from gffdisc.lattice import BoxSpec, Window, enumerate_columns, sphere_radius
from gffdisc.montecarlo import task_rng
from gffdisc.percolation import (
    ClusterLabels,
    LevelMask,
    ZFieldConfig,
    bad_column_census,
    bernoulli_census_bound,
    check_levels,
    classify_boxes,
    clopper_pearson_upper,
    clusters,
    column_crossing_path,
    contour_bound_check,
    crossing_curve,
    crossing_event,
    diameter_threshold,
    disconnected,
    disconnection_curve,
    disconnection_event,
    estimate_rho,
    harmonic_sup_tail,
    infinite_disconnection_event,
    maximal_contour,
    minimal_contour,
    path_building_check,
    shortest_path,
    tilted_disconnection,
    zfield_local_correlations,
    zfield_statistics,
    zfield_variance,
    zfield_variance_mc,
)
from gffdisc.potential import free_green


def constant_field(value, radius=4, d=3):
    window = Window.ball(radius, d)
    return Field(window, np.full(window.size, float(value)))


def sphere_fields(n, seed, radius=4):
    window = Window.ball(radius)
    values = free_samples(window, [task_rng(seed, i) for i in range(n)])
    return [Field(window, v) for v in values]


def bfs_labels(mask, star=False):
    """Cluster labels by breadth-first search: -1 off the mask, else the smallest raster index."""
    offsets = [o for o in itertools.product((-1, 0, 1), repeat=mask.ndim)
               if any(o) and (star or sum(map(abs, o)) == 1)]
    labels = np.full(mask.shape, -1, dtype=np.int64)
    for start in np.ndindex(mask.shape):
        if not mask[start] or labels[start] >= 0:
            continue
        root = int(np.ravel_multi_index(start, mask.shape))
        labels[start] = root
        queue = deque([start])
        while queue:
            site = queue.popleft()
            for offset in offsets:
                nb = tuple(s + o for s, o in zip(site, offset))
                if all(0 <= v < n for v, n in zip(nb, mask.shape)) and mask[nb] and labels[nb] < 0:
                    labels[nb] = root
                    queue.append(nb)
    return labels


class ClusterTests(SimpleTestCase):
    """Test level masks and cluster labels."""

    def test_labels_are_smallest_site_index(self):
        """Test canonical labels, sizes and diameters of two clusters."""
        window = Window(BoxSpec((0, 0, 0), (1, 1, 5)))
        mask = np.array([True, True, False, True, False]).reshape(window.shape)
        labels = ClusterLabels(window, mask)
        self.assertEqual(labels.labels.ravel().tolist(), [0, 0, -1, 3, -1])
        self.assertEqual(labels.sizes.tolist(), [2, 1])
        self.assertEqual(labels.diameters.tolist(), [1, 0])
        self.assertTrue(labels.connected((0, 0, 0), (0, 0, 1)))
        self.assertFalse(labels.connected((0, 0, 0), (0, 0, 3)))

    def test_labels_match_breadth_first_search(self):
        """Test labels against breadth-first search on 1000 random 6^3 masks at several densities."""
        window = Window(BoxSpec((0, 0, 0), (6, 6, 6)))
        rng = np.random.default_rng(11)
        densities = (0.2, 0.3, 0.5, 0.7)
        for i in range(1000):
            mask = rng.random(window.shape) < densities[i % len(densities)]
            np.testing.assert_array_equal(ClusterLabels(window, mask).labels, bfs_labels(mask))
        for i in range(100):
            mask = rng.random(window.shape) < 0.15
            np.testing.assert_array_equal(ClusterLabels(window, mask, 'star').labels, bfs_labels(mask, star=True))

    def test_star_connectivity_joins_diagonals(self):
        """Test that diagonal neighbors are joined only under *-connectivity."""
        window = Window(BoxSpec((0, 0, 0), (2, 2, 1)))
        mask = np.array([[[True], [False]], [[False], [True]]])
        self.assertEqual(len(ClusterLabels(window, mask, 'nearest')), 2)
        self.assertEqual(len(ClusterLabels(window, mask, 'star')), 1)

    def test_unknown_connectivity(self):
        """Test that an unknown connectivity is rejected."""
        with self.assertRaises(InvalidArgumentError):
            ClusterLabels(Window.ball(0), np.ones((1, 1, 1), dtype=bool), 'hex')

    def test_level_mask_from_field(self):
        """Test E^{≥α} of a field."""
        phi = Field(Window.ball(1), np.arange(27) - 13.0)
        level = LevelMask.from_field(phi, 0.0)
        self.assertEqual(level.count, 14)
        self.assertEqual(len(clusters(level)), 1)


class CrossingTests(SimpleTestCase):
    """Test the crossing event and curve."""

    def test_constant_fields(self):
        """Test crossing above and below a constant level."""
        phi = constant_field(0.0, radius=5)
        self.assertTrue(crossing_event(phi, -1.0, 2))
        self.assertFalse(crossing_event(phi, 1.0, 2))

    def test_curve_monotone(self):
        """Test that the crossing curve is nonincreasing and hits 1 and 0 at extreme levels."""
        curve = crossing_curve([-10.0, -0.5, 0.5, 10.0], 1, n_mc=60, seed=3, workers=1)
        means = [e.mean for e in curve]
        self.assertEqual(means, sorted(means, reverse=True))
        self.assertEqual((means[0], means[-1]), (1.0, 0.0))
        self.assertTrue(all(e.n == 60 for e in curve))


class DisconnectionTests(SimpleTestCase):
    """Test the disconnection events."""

    def test_wall_disconnects(self):
        """Test that a closed shell at |x| = 3 disconnects ∂B_2 from S_2."""
        box = BoxSpec.ball(4)
        open_mask = box.linf_grid() != 3
        self.assertTrue(disconnected(open_mask, 2, 4))
        self.assertFalse(disconnected(np.ones(box.shape, dtype=bool), 2, 4))

    def test_constant_field_events(self):
        """Test A_N for constant fields."""
        phi = constant_field(0.0)
        self.assertFalse(disconnection_event(phi, -1.0, 2, 2.0))
        self.assertTrue(disconnection_event(phi, 1.0, 2, 2.0))

    def test_window_must_cover_sphere(self):
        """Test that a window smaller than B_[MN] is rejected."""
        with self.assertRaises(GeometryError):
            disconnection_event(constant_field(0.0, radius=3), 0.0, 2, 2.0)

    def test_kappa_event_implies_a_n(self):
        """Test that the κ-variant implies A_N on random open masks."""
        rng = np.random.default_rng(11)
        box = BoxSpec.ball(16)
        events = 0
        for p in (0.1, 0.2, 0.3):
            for _ in range(20):
                open_mask = rng.random(box.shape) < p
                if disconnected(open_mask, 12, 16, kappa=0.09):
                    events += 1
                    self.assertTrue(disconnected(open_mask, 12, 16))
        self.assertGreater(events, 0)

    def test_kappa_range(self):
        """Test that κ outside (0, 1/10) or too small for N is rejected."""
        with self.assertRaises(InvalidArgumentError):
            disconnection_event(constant_field(0.0), 0.0, 2, 2.0, kappa=0.2)
        with self.assertRaises(InvalidArgumentError):
            disconnection_event(constant_field(0.0), 0.0, 2, 2.0, kappa=0.09)

    def test_a_n_implies_infinite_disconnection(self):
        """Test that A_N implies no path from ∂B_N to the window's outer layer."""
        for phi in sphere_fields(100, 6):
            if disconnection_event(phi, 0.3, 2, 2.0):
                self.assertTrue(infinite_disconnection_event(phi, 0.3, 2))

    def test_curve_monotone(self):
        """Test that P[A_N] is nondecreasing in α on coupled samples."""
        curve = disconnection_curve([-1.0, 0.0, 0.5, 1.0, 6.0], 2, 2.0, n_mc=100, seed=2, workers=1)
        means = [e.mean for e in curve]
        self.assertEqual(means, sorted(means))
        self.assertEqual(means[-1], 1.0)


class ContourTests(SimpleTestCase):
    """Test maximal and minimal contours."""

    def test_contour_exists_iff_disconnected(self):
        """Test contour existence ⇔ A_N on 1000 sampled fields with zero disagreements."""
        disagreements = 0
        for phi in sphere_fields(1000, 7):
            event = disconnection_event(phi, 0.5, 2, 2.0)
            disagreements += (maximal_contour(phi, 0.5, 2, 2.0) is not None) != event
            disagreements += (minimal_contour(phi, 0.5, 2, 2.0) is not None) != event
        self.assertEqual(disagreements, 0)

    def test_contour_properties(self):
        """Test that contours surround B_N, φ < α on the maximal one and Int(min) ⊆ Int(max)."""
        checked = 0
        for phi in sphere_fields(200, 8):
            outer = maximal_contour(phi, 0.8, 2, 2.0)
            if outer is None:
                continue
            inner = minimal_contour(phi, 0.8, 2, 2.0)
            self.assertTrue(outer.surrounds())
            self.assertTrue(inner.surrounds())
            self.assertTrue((phi.at(outer.points) < 0.8).all())
            self.assertTrue((phi.at(inner.points) < 0.8).all())
            outer_set = {tuple(p) for p in outer.interior}
            self.assertTrue(all(tuple(p) in outer_set for p in inner.interior))
            checked += 1
        self.assertGreater(checked, 0)

    def test_maximal_contour_cannot_grow(self):
        """
        Test that every maximal contour site borders the cluster of E^{≥α} joined to the
        outer layer, so no contour with φ < α encloses a strictly larger interior.
        """
        R = sphere_radius(2, 2.0)
        big = BoxSpec.ball(R + 1, 3)
        steps = np.array([o for o in itertools.product((-1, 0, 1), repeat=3) if sum(map(abs, o)) == 1])
        checked = 0
        for phi in sphere_fields(200, 9):
            contour = maximal_contour(phi, 0.5, 2, 2.0)
            if contour is None:
                continue
            open_set = big.inner_boundary_mask()
            open_set[1:-1, 1:-1, 1:-1] = phi.values.reshape(phi.window.shape) >= 0.5
            labels = bfs_labels(open_set)
            outside = labels == labels[0, 0, 0]
            for site in contour.points:
                neighbors = site + steps + R + 1
                self.assertTrue(outside[tuple(neighbors.T)].any())
            checked += 1
        self.assertGreater(checked, 0)

    def test_clopper_pearson(self):
        """Test the closed form for zero successes and the all-success case."""
        self.assertAlmostEqual(clopper_pearson_upper(0, 100, 0.99), 1 - 0.01 ** (1 / 100))
        self.assertEqual(clopper_pearson_upper(5, 5), 1.0)

    def test_contour_bound_passes(self):
        """Test the bound on B_2 with 200 fields, a reduced run of the contour-bound experiment."""
        report = contour_bound_check(-1.0, 2, 2.0, n_mc=200, seed=1, workers=1)
        self.assertTrue(report.passed)
        self.assertAlmostEqual(report.bound, 2 * math.exp(-0.5 * report.capacity))
        self.assertEqual(report.sampler_bias, 0.0)

    def test_contour_bound_needs_negative_alpha(self):
        """Test that α >= 0 is rejected."""
        with self.assertRaises(InvalidArgumentError):
            contour_bound_check(0.0, 2, 2.0, n_mc=10, seed=0)


class TiltedDisconnectionTests(SimpleTestCase):
    """Test the entropy lower bound from the tilted law."""

    def test_lower_bound_below_direct_estimate(self):
        """Test entropy = ½E(f, f) and lower bound <= log of the direct upper bound."""
        report = tilted_disconnection(-0.5, 2, 2.0, -1.0, n_mc=300, seed=4, workers=1)
        shift = TiltProfile(-1.0, 2, 2.0, eta=0.1).shift(Window.ball(4))
        self.assertAlmostEqual(report.entropy, 0.5 * dirichlet_energy(shift))
        self.assertTrue(report.consistent)
        self.assertGreaterEqual(report.tilted.mean, report.direct.mean)


class ZFieldTests(SimpleTestCase):
    """Test the Z-field of harmonic averages."""

    def test_single_box_weight(self):
        """Test that one box carries all of ν̄."""
        cfg = ZFieldConfig.build([(0, 0, 0)], 2, 2)
        self.assertAlmostEqual(cfg.weights[0], 1.0)
        self.assertTrue(cfg.weights_bounded)
        self.assertFalse(cfg.asymptotic_regime)

    def test_separation_enforced(self):
        """Test that sites closer than L + 2KL are rejected."""
        with self.assertRaises(InvalidConfigurationError):
            ZFieldConfig.build([(0, 0, 0), (8, 0, 0)], 2, 2)

    def test_f_must_lie_in_d(self):
        """Test that f(B) outside D_B is rejected."""
        cfg = ZFieldConfig.build([(0, 0, 0)], 2, 2)
        with self.assertRaises(InvalidArgumentError):
            zfield_variance(cfg, [(20, 0, 0)])

    def test_exact_variance_bounds(self):
        """Test 0 < Var(Z_f) < g(0) for one box."""
        variance = zfield_variance(ZFieldConfig.build([(0, 0, 0)], 2, 2))
        self.assertGreater(variance, 0)
        self.assertLess(variance, free_green((0, 0, 0)))

    def test_scaled_variance_decreases_in_K(self):
        """Test that Var(Z_f) cap(C) is strictly decreasing over K = 2, 3, 4, 5."""
        scaled = []
        for K in (2, 3, 4, 5):
            cfg = ZFieldConfig.build([(0, 0, 0)], 2, K)
            scaled.append(zfield_variance(cfg) * cfg.capacity)
        self.assertTrue(all(b < a for a, b in zip(scaled, scaled[1:])), scaled)

    def test_variance_matches_samples(self):
        """Test the exact variance against the sample variance within 4 sigma."""
        cfg = ZFieldConfig.build([(0, 0, 0)], 2, 2)
        check = zfield_variance_mc(cfg, n_mc=2000, seed=3, workers=1)
        self.assertLess(check.z_score, 4)

    def test_two_boxes_cross_term(self):
        """Test the g(f(B), f(B')) cross term for K = 3 against samples."""
        cfg = ZFieldConfig.build([(0, 0, 0), (14, 0, 0)], 2, 3)
        variance, inf_stats = zfield_statistics(cfg, n_mc=1500, seed=5, workers=1)
        self.assertLess(variance.z_score, 4)
        self.assertEqual(inf_stats.sites, 2)
        self.assertLess(inf_stats.estimate.mean, 0)

    def test_local_fields_uncorrelated(self):
        """Test that local fields of separated boxes are uncorrelated."""
        cfg = ZFieldConfig.build([(0, 0, 0), (5, 0, 0)], 1, 2)
        cross = zfield_local_correlations(cfg, n_mc=2000, seed=2, per_box=6, workers=1)
        self.assertLess(cross.max_abs, cross.family_threshold)
        with self.assertRaises(InvalidConfigurationError):
            zfield_local_correlations(ZFieldConfig.build([(0, 0, 0)], 1, 2), n_mc=10, seed=0)

    def test_harmonic_tail(self):
        """Test that tail estimates decrease in the level and too few levels are rejected."""
        tail = harmonic_sup_tail(1, 2, [0.5, 1.0, 1.5, 2.0], n_mc=300, seed=1, workers=1)
        means = [e.mean for e in tail.estimates]
        self.assertEqual(means, sorted(means, reverse=True))
        with self.assertRaises(EstimationError):
            harmonic_sup_tail(1, 2, [50.0, 60.0, 70.0], n_mc=50, seed=1, workers=1)


class CoarseGrainingTests(SimpleTestCase):
    """Test good boxes, paths across columns and the bad-column census."""

    def setUp(self):
        """A window holding D of the origin box and its neighbors for L = K = 2."""
        self.window = Window(BoxSpec((-8, -8, -8), (10, 10, 10)))

    def field(self, value):
        return Field(self.window, np.full(self.window.size, float(value)))

    def test_diameter_threshold(self):
        """Test the integer form of diam >= L/10."""
        self.assertEqual([diameter_threshold(L) for L in (1, 4, 10, 11)], [1, 1, 1, 2])

    def test_level_checks(self):
        """Test that γ <= δ and a <= 0 are rejected."""
        with self.assertRaises(InvalidConfigurationError):
            check_levels(0.0, 0.0)
        with self.assertRaises(InvalidConfigurationError):
            check_levels(1.0, 0.0, a=0.0)

    def test_constant_field_is_good(self):
        """Test that a constant field makes ψ = 0 and h constant."""
        status = classify_boxes(self.field(0.3), [(0, 0, 0)], 2, 2, gamma=-0.5, delta=-1.0, a=1.0)[0]
        self.assertTrue(status.psi_good)
        self.assertTrue(status.h_good)
        self.assertAlmostEqual(status.min_h, 0.3)

    def test_low_field_is_h_bad(self):
        """Test that inf h <= -a makes a box h-bad."""
        status = classify_boxes(self.field(-0.3), [(0, 0, 0)], 2, 2, gamma=-0.5, delta=-1.0, a=0.2)[0]
        self.assertFalse(status.h_good)
        self.assertFalse(status.good)

    def test_high_gamma_is_psi_bad(self):
        """Test that no component of {ψ >= γ} exists for γ > 0 on a constant field."""
        status = classify_boxes(self.field(0.3), [(0, 0, 0)], 2, 2, gamma=0.5, delta=0.0)[0]
        self.assertFalse(status.psi_good)

    def test_shortest_path(self):
        """Test a path along a corridor and None across a wall."""
        allowed = np.ones((5, 1, 1), dtype=bool)
        start = np.zeros_like(allowed)
        goal = np.zeros_like(allowed)
        start[0], goal[4] = True, True
        path = shortest_path(allowed, start, goal)
        self.assertEqual(path[:, 0].tolist(), [0, 1, 2, 3, 4])
        allowed[2] = False
        self.assertIsNone(shortest_path(allowed, start, goal))

    def test_column_path(self):
        """Test a nearest-neighbor path from the first to the last box of a column."""
        window = Window(BoxSpec((-6, -6, -6), (16, 8, 8)))
        field = Field(window, np.ones(window.size))
        boxes = [(0, 0, 0), (2, 0, 0), (4, 0, 0)]
        path = column_crossing_path(field, boxes, 2, 2, delta=0.0, a=1.0)
        self.assertTrue(BoxSpec((0, 0, 0), (2, 2, 2)).contains(path[:1])[0])
        self.assertTrue(BoxSpec((4, 0, 0), (6, 2, 2)).contains(path[-1:])[0])
        self.assertTrue((np.abs(np.diff(path, axis=0)).sum(axis=1) == 1).all())
        self.assertIsNone(column_crossing_path(Field(window, -np.ones(window.size)), boxes, 2, 2, 0.0, 0.5))

    def test_rho_and_census_bound(self):
        """Test ρ, K̄ and the trivial bound outside η < ρ̃ < 1."""
        with self.assertRaises(EstimationError):
            estimate_rho(0.0, 4)
        self.assertAlmostEqual(estimate_rho(0.25, 4), 1.0)
        bound = bernoulli_census_bound(N=8, L=4, K=2, d=3, m=100, eta=0.25)
        self.assertEqual(bound.K_bar, 7)
        self.assertAlmostEqual(bound.rho_tilde, 1.0 / 343 * 4 / 100)
        self.assertEqual(bound.bound, 1.0)

    def test_chernoff_bound_regime(self):
        """Test that the bound is below 1 for η < ρ̃ < 1 and many boxes."""
        bound = bernoulli_census_bound(N=400, L=4, K=2, d=3, m=20000, eta=1e-4)
        self.assertLess(1e-4, bound.rho_tilde)
        self.assertGreater(bound.rate, 0)
        self.assertLess(bound.bound, 1.0)

    def test_census(self):
        """Test census shapes and counts on a small geometry."""
        report = bad_column_census(2, 3.0, 2, 2, 0.5, 0.0, n_mc=3, seed=1, workers=1)
        self.assertEqual(report.columns, len(enumerate_columns(2, 3.0, 2)))
        self.assertEqual(report.boxes, 60)
        self.assertEqual(report.counts.shape, (3,))
        self.assertTrue(((report.counts >= 0) & (report.counts <= report.columns)).all())

    def test_census_with_all_boxes_bad(self):
        """Test that η̂ = 1 leaves ρ and C_N undefined with a note."""
        report = bad_column_census(2, 3.0, 2, 2, 50.0, 0.0, n_mc=2, seed=1, workers=1)
        self.assertEqual(report.eta.mean, 1.0)
        self.assertTrue(math.isnan(report.rho))
        self.assertIsNone(report.cn_frequency)
        self.assertIn('eta', report.note)

    def test_paths_found_for_good_columns(self):
        """Test that every column of good boxes is crossed by a path in E^{≥δ-a}."""
        check = path_building_check(2, 3.0, 2, 2, gamma=0.0, delta=-0.5, a=1.0, n_mc=3, seed=2, workers=1)
        self.assertTrue(check.all_found)
        self.assertEqual(check.samples, 3)
