"""
Tests for Lattice Geometry

Tests point sets, boxes, windows, boundaries, the disconnection sphere radius,
the box hierarchy and the column enumeration.
"""
import numpy as np
from django.test import SimpleTestCase

from gffdisc.exceptions import GeometryError, InvalidConfigurationError
from gffdisc.lattice import (
    BoxHierarchy,
    BoxSpec,
    PointIndex,
    Window,
    as_points,
    boundary,
    diameter,
    enumerate_columns,
    inner_boundary,
    separated,
    sphere_radius,
    unique_points,
    unit_vectors,
)


class PointSetTests(SimpleTestCase):
    """Test point arrays and the point index."""

    def test_single_point_becomes_row(self):
        """Test that a single point is coerced to a (1, d) array."""
        arr = as_points((1, 2, 3))
        self.assertEqual(arr.shape, (1, 3))
        self.assertEqual(arr.dtype, np.int64)

    def test_unique_points_sorted(self):
        """Test that duplicates are removed and rows sorted lexicographically."""
        arr = unique_points([[1, 0, 0], [0, 0, 0], [1, 0, 0]])
        self.assertEqual(arr.tolist(), [[0, 0, 0], [1, 0, 0]])

    def test_unit_vectors(self):
        """Test the 2d nearest-neighbor steps."""
        steps = unit_vectors(3)
        self.assertEqual(len(steps), 6)
        self.assertTrue((np.abs(steps).sum(axis=1) == 1).all())
        self.assertEqual(steps.sum(axis=0).tolist(), [0, 0, 0])

    def test_point_index_lookup(self):
        """Test that present points map to their row and absent ones to -1."""
        index = PointIndex([[0, 0, 0], [2, 1, 0], [5, 5, 5]])
        rows = index.lookup([[2, 1, 0], [1, 1, 1], [5, 5, 5], [9, 9, 9]])
        self.assertEqual(rows.tolist(), [1, -1, 2, -1])

    def test_diameter_is_linf(self):
        """Test the l-infinity diameter of a point set."""
        self.assertEqual(diameter([[0, 0, 0], [3, 1, -1]]), 3)
        self.assertEqual(diameter(np.zeros((0, 3))), 0)


class BoundaryTests(SimpleTestCase):
    """Test outer and inner boundaries."""

    def test_boundary_of_single_site(self):
        """Test that the boundary of a site is its 2d neighbors."""
        self.assertEqual(len(boundary([[0, 0, 0]])), 6)

    def test_boundary_of_box_matches_outer_faces(self):
        """Test that the boundary of a box equals its face-adjacent shell."""
        box = BoxSpec.ball(2)
        self.assertEqual(boundary(box).tolist(), box.outer_boundary().tolist())
        self.assertEqual(len(box.outer_boundary()), 6 * 25)

    def test_inner_boundary_of_box(self):
        """Test that the inner boundary of B_2 is B_2 minus B_1."""
        self.assertEqual(len(inner_boundary(BoxSpec.ball(2))), 125 - 27)

    def test_empty_set_has_empty_boundary(self):
        """Test that the empty set has an empty boundary."""
        self.assertEqual(len(boundary(np.zeros((0, 3), dtype=np.int64))), 0)


class BoxAndWindowTests(SimpleTestCase):
    """Test half-open boxes and window indexing."""

    def test_ball_corners(self):
        """Test that B(x, r) spans x - r to x + r inclusive."""
        box = BoxSpec.ball(2, 3, center=(1, 0, 0))
        self.assertEqual(box.lower, (-1, -2, -2))
        self.assertEqual(box.upper, (4, 3, 3))
        self.assertEqual(box.size, 125)
        self.assertEqual(box.radius, 2)

    def test_empty_box_rejected(self):
        """Test that an empty box raises GeometryError."""
        with self.assertRaises(GeometryError):
            BoxSpec((0, 0, 0), (0, 1, 1))

    def test_window_index_round_trip(self):
        """Test that point(index(x)) recovers x."""
        window = Window.ball(3)
        points = np.array([[0, 0, 0], [-3, 2, 1], [3, 3, 3]])
        self.assertEqual(window.point(window.index(points)).tolist(), points.tolist())

    def test_window_index_rejects_outside_points(self):
        """Test that indexing a point outside the window fails."""
        with self.assertRaises(GeometryError):
            Window.ball(1).index([[2, 0, 0]])

    def test_row_major_order(self):
        """Test that window sites follow row-major order of the box."""
        window = Window.ball(1)
        values = np.arange(window.size).reshape(window.shape)
        self.assertEqual(values.ravel()[window.index([[1, 1, 1]])][0], window.size - 1)

    def test_slices_for_sub_box(self):
        """Test slicing a sub-box out of a window array."""
        window = Window.ball(3)
        slices = window.slices_for(BoxSpec.ball(1))
        self.assertEqual(np.zeros(window.shape)[slices].shape, (3, 3, 3))


class SphereRadiusTests(SimpleTestCase):
    """Test the integer sphere radius [MN]."""

    def test_floor_of_product(self):
        """Test that [MN] is the integer part of M N."""
        self.assertEqual(sphere_radius(4, 2.0), 8)
        self.assertEqual(sphere_radius(3, 1.5), 4)

    def test_representation_error_absorbed(self):
        """Test that M = 1.1, N = 10 gives radius 11."""
        self.assertEqual(sphere_radius(10, 1.1), 11)

    def test_too_small_sphere_rejected(self):
        """Test that MN < N + 1 raises GeometryError."""
        with self.assertRaises(GeometryError):
            sphere_radius(4, 1.1)


class BoxHierarchyTests(SimpleTestCase):
    """Test the boxes attached to a coarse lattice site."""

    def test_box_sizes(self):
        """Test the side lengths of B, D, U and B~."""
        h = BoxHierarchy((0, 0, 0), 4, 3)
        self.assertEqual(h.B.shape, (4, 4, 4))
        self.assertEqual(h.D.shape, (28, 28, 28))
        self.assertEqual(h.U.shape, (4 + 24 - 2,) * 3)
        self.assertEqual(h.B_tilde.shape, (4 + 24,) * 3)

    def test_nesting_needs_k_four(self):
        """Test that D ⊆ U holds from K = 4 on."""
        self.assertFalse(BoxHierarchy((0, 0, 0), 4, 3).nested)
        self.assertTrue(BoxHierarchy((0, 0, 0), 4, 4).nested)

    def test_site_off_coarse_lattice_rejected(self):
        """Test that z must lie in L Z^d."""
        with self.assertRaises(GeometryError):
            BoxHierarchy((1, 0, 0), 4, 2)

    def test_small_k_rejected(self):
        """Test that K < 2 raises InvalidConfigurationError."""
        with self.assertRaises(InvalidConfigurationError):
            BoxHierarchy((0, 0, 0), 4, 1)

    def test_separation_keeps_boxes_disjoint(self):
        """Test that sites at the separation distance have disjoint B~ and U."""
        L, K = 2, 3
        distance = BoxHierarchy.separation(L, K)
        first = BoxHierarchy((0, 0, 0), L, K)
        second = BoxHierarchy((distance, 0, 0), L, K)
        self.assertFalse(first.B_tilde.intersects(second.U))

    def test_separated(self):
        """Test the pairwise distance check."""
        self.assertTrue(separated([[0, 0, 0], [10, 0, 0]], 10))
        self.assertFalse(separated([[0, 0, 0], [9, 3, 0]], 10))


class ColumnTests(SimpleTestCase):
    """Test the columns of L-boxes attached to the faces of B_N."""

    def test_column_count_and_length(self):
        """Test the number of columns and boxes per column."""
        columns = enumerate_columns(N=2, M=3.0, L=2, d=3)
        # feet at -2 and 0; boxes must fit in [N + 1, [(M+1)N]] = [3, 8] along the axis
        self.assertEqual(len(columns), 6 * 4)
        lengths = {column.sign: len(column) for column in columns}
        self.assertEqual(lengths, {1: 2, -1: 3})

    def test_boxes_ordered_outward(self):
        """Test that boxes are ordered away from the face."""
        for column in enumerate_columns(N=2, M=3.0, L=2, d=3):
            levels = [box.lower[column.axis] * column.sign for box in column.boxes]
            self.assertEqual(levels, sorted(levels))

    def test_boxes_outside_b_n(self):
        """Test that every column box lies outside B_N."""
        inner = BoxSpec.ball(2)
        for column in enumerate_columns(N=2, M=3.0, L=2, d=3):
            for box in column.boxes:
                self.assertFalse(box.intersects(inner))

    def test_large_l_gives_no_columns(self):
        """Test that no column fits when L > 2N + 1."""
        self.assertEqual(enumerate_columns(N=1, M=3.0, L=4, d=3), [])
