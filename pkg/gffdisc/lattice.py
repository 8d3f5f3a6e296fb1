"""
Geometry of the lattice Z^d.

Provides:
- Point arrays and a hashed point index
- Half-open product boxes (BoxSpec) and windows with a stable site indexing
- Outer and inner boundaries of finite point sets
- The box hierarchy B_z, D_z, U_z, B~_z over the coarse lattice L Z^d
- Columns of L-boxes attached to the faces of B_N

Point sets are integer arrays of shape (n, d). Functions returning point sets return
them sorted lexicographically without duplicates, which is also the row-major order
of a box.
"""

import itertools
import logging
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .exceptions import GeometryError, InvalidArgumentError, InvalidConfigurationError

logger = logging.getLogger(__name__)

Point = tuple


def as_points(points, d=None):
    """
    Coerce a point collection to an int64 array of shape (n, d).

    Accepts a BoxSpec, a Window, a single point or any nested sequence of points.
    """
    if isinstance(points, BoxSpec):
        return points.points()
    if isinstance(points, Window):
        return points.points
    arr = np.asarray(points, dtype=np.int64)
    if arr.size == 0:
        return np.zeros((0, d or 0), dtype=np.int64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise InvalidArgumentError(f'points must be an (n, d) array, got shape {arr.shape}')
    if d is not None and arr.shape[1] != d:
        raise InvalidArgumentError(f'points have dimension {arr.shape[1]}, expected {d}')
    return arr


def unique_points(points, d=None):
    """Sorted, duplicate-free copy of a point array."""
    arr = as_points(points, d)
    if len(arr) == 0:
        return arr
    return np.unique(arr, axis=0)


def unit_vectors(d):
    """The 2d nearest-neighbor steps, +e_1, -e_1, +e_2, -e_2, ..."""
    steps = np.zeros((2 * d, d), dtype=np.int64)
    for axis in range(d):
        steps[2 * axis, axis] = 1
        steps[2 * axis + 1, axis] = -1
    return steps


def linf_norm(points):
    return np.abs(as_points(points)).max(axis=1)


def linf_distance(x, y):
    return int(np.abs(np.asarray(x, dtype=np.int64) - np.asarray(y, dtype=np.int64)).max())


def diameter(points):
    """l-infinity diameter sup |x - y|, which is the largest bounding-box extent."""
    arr = as_points(points)
    if len(arr) == 0:
        return 0
    return int((arr.max(axis=0) - arr.min(axis=0)).max())


class PointIndex:
    """
    Maps points to their row in a reference point array.

    Points are encoded as linear keys over the bounding box of the reference set and
    looked up by binary search; anything outside the set maps to -1.
    """

    def __init__(self, points, d=None):
        self.points = as_points(points, d)
        self.d = self.points.shape[1]
        if len(self.points) == 0:
            self._lo = np.zeros(self.d, dtype=np.int64)
            self._shape = np.ones(self.d, dtype=np.int64)
            self._sorted = np.zeros(0, dtype=np.int64)
            self._order = np.zeros(0, dtype=np.int64)
            return
        self._lo = self.points.min(axis=0)
        self._shape = self.points.max(axis=0) - self._lo + 1
        keys = np.ravel_multi_index(tuple((self.points - self._lo).T), tuple(self._shape))
        self._order = np.argsort(keys, kind='stable')
        self._sorted = keys[self._order]

    def __len__(self):
        return len(self.points)

    def lookup(self, query):
        """Row index of every query point, -1 where the point is not in the set."""
        q = as_points(query, self.d)
        out = np.full(len(q), -1, dtype=np.int64)
        if len(q) == 0 or len(self._sorted) == 0:
            return out
        rel = q - self._lo
        inside = np.all((rel >= 0) & (rel < self._shape), axis=1)
        rows = np.flatnonzero(inside)
        if len(rows) == 0:
            return out
        keys = np.ravel_multi_index(tuple(rel[rows].T), tuple(self._shape))
        pos = np.minimum(np.searchsorted(self._sorted, keys), len(self._sorted) - 1)
        hit = self._sorted[pos] == keys
        out[rows[hit]] = self._order[pos[hit]]
        return out

    def contains(self, query):
        return self.lookup(query) >= 0


def boundary(points, d=None):
    """
    Outer boundary: sites outside K with a nearest neighbor in K.

    The empty set has an empty boundary.
    """
    pts = unique_points(points, d)
    if len(pts) == 0:
        return pts
    dim = pts.shape[1]
    candidates = unique_points((pts[:, None, :] + unit_vectors(dim)[None]).reshape(-1, dim))
    return candidates[~PointIndex(pts).contains(candidates)]


def inner_boundary(points, d=None):
    """Sites of K with a nearest neighbor outside K."""
    pts = unique_points(points, d)
    if len(pts) == 0:
        return pts
    dim = pts.shape[1]
    steps = unit_vectors(dim)
    hits = PointIndex(pts).lookup((pts[:, None, :] + steps[None]).reshape(-1, dim))
    return pts[(hits.reshape(len(pts), len(steps)) < 0).any(axis=1)]


# =============================================================================
# BOXES AND WINDOWS
# =============================================================================

@dataclass(frozen=True)
class BoxSpec:
    """
    Half-open product box [lower, upper) of Z^d.

    The closed l-infinity ball B(x, r) is BoxSpec.ball(r, center=x), i.e. the corners
    x - r and x + r + 1.
    """

    lower: tuple
    upper: tuple

    def __post_init__(self):
        lower = tuple(int(v) for v in self.lower)
        upper = tuple(int(v) for v in self.upper)
        if len(lower) != len(upper):
            raise GeometryError(f'box corners differ in dimension: {lower} vs {upper}')
        if any(lo >= hi for lo, hi in zip(lower, upper)):
            raise GeometryError(f'empty box: lower {lower} must be < upper {upper}')
        object.__setattr__(self, 'lower', lower)
        object.__setattr__(self, 'upper', upper)

    @classmethod
    def ball(cls, radius, d=3, center=None):
        if radius < 0:
            raise GeometryError(f'ball radius must be nonnegative, got {radius}')
        center = tuple(center) if center is not None else (0,) * d
        return cls(tuple(c - radius for c in center), tuple(c + radius + 1 for c in center))

    @property
    def d(self):
        return len(self.lower)

    @property
    def shape(self):
        return tuple(hi - lo for lo, hi in zip(self.lower, self.upper))

    @property
    def size(self):
        return math.prod(self.shape)

    @property
    def is_cube(self):
        return len(set(self.shape)) == 1

    @property
    def radius(self):
        """Largest half side length, (side - 1) / 2 for a ball."""
        return (max(self.shape) - 1) // 2

    @property
    def center(self):
        return tuple((lo + hi - 1) // 2 for lo, hi in zip(self.lower, self.upper))

    def contains(self, points):
        arr = as_points(points, self.d)
        return np.all((arr >= self.lower) & (arr < self.upper), axis=1)

    def contains_box(self, other):
        return all(a <= b for a, b in zip(self.lower, other.lower)) and \
            all(a >= b for a, b in zip(self.upper, other.upper))

    def intersects(self, other):
        return all(max(a, b) < min(c, e) for a, b, c, e in
                   zip(self.lower, other.lower, self.upper, other.upper))

    def translate(self, offset):
        return BoxSpec(tuple(v + o for v, o in zip(self.lower, offset)),
                       tuple(v + o for v, o in zip(self.upper, offset)))

    def expand(self, k):
        """Box grown by k sites on every side (shrunk for negative k)."""
        return BoxSpec(tuple(v - k for v in self.lower), tuple(v + k for v in self.upper))

    def points(self):
        idx = np.indices(self.shape, dtype=np.int64).reshape(self.d, -1).T
        return idx + np.asarray(self.lower, dtype=np.int64)

    def coordinates(self):
        """Open mesh of coordinate arrays, broadcastable to the box shape."""
        return np.ix_(*[np.arange(lo, hi) for lo, hi in zip(self.lower, self.upper)])

    def linf_grid(self, center=None):
        """|x - center|_inf at every site, as an array of the box shape."""
        center = center if center is not None else (0,) * self.d
        grid = np.zeros(self.shape, dtype=np.int64)
        for c, axis_coords in zip(center, self.coordinates()):
            grid = np.maximum(grid, np.abs(axis_coords - c))
        return grid

    def inner_boundary_mask(self):
        mask = np.zeros(self.shape, dtype=bool)
        for axis in range(self.d):
            index = [slice(None)] * self.d
            index[axis] = 0
            mask[tuple(index)] = True
            index[axis] = -1
            mask[tuple(index)] = True
        return mask

    def outer_boundary(self):
        """Points outside the box at Euclidean distance 1 (corners and edges excluded)."""
        faces = []
        for axis in range(self.d):
            for value in (self.lower[axis] - 1, self.upper[axis]):
                lower = list(self.lower)
                upper = list(self.upper)
                lower[axis], upper[axis] = value, value + 1
                faces.append(BoxSpec(tuple(lower), tuple(upper)).points())
        return unique_points(np.concatenate(faces))


class Window:
    """
    A box together with its site indexing.

    Site i is the i-th point of the box in row-major order; fields on the window are
    arrays of the box shape, so `values.ravel()[i]` is the value at `point(i)`.
    """

    def __init__(self, box):
        if not isinstance(box, BoxSpec):
            raise InvalidArgumentError(f'Window needs a BoxSpec, got {type(box).__name__}')
        self.box = box

    @classmethod
    def ball(cls, radius, d=3, center=None):
        return cls(BoxSpec.ball(radius, d, center))

    def __eq__(self, other):
        return isinstance(other, Window) and other.box == self.box

    def __hash__(self):
        return hash(self.box)

    def __repr__(self):
        return f'Window({self.box.lower} -> {self.box.upper})'

    @property
    def d(self):
        return self.box.d

    @property
    def shape(self):
        return self.box.shape

    @property
    def size(self):
        return self.box.size

    @cached_property
    def points(self):
        return self.box.points()

    def contains(self, points):
        return self.box.contains(points)

    def index(self, points):
        """Site indices of points; every point must lie in the window."""
        arr = as_points(points, self.d)
        if len(arr) and not self.contains(arr).all():
            raise GeometryError(f'points outside {self!r}')
        if len(arr) == 0:
            return np.zeros(0, dtype=np.int64)
        return np.ravel_multi_index(tuple((arr - np.asarray(self.box.lower)).T), self.shape)

    def point(self, index):
        coords = np.unravel_index(np.asarray(index), self.shape)
        return np.stack(coords, axis=-1) + np.asarray(self.box.lower)

    def mask_of(self, points):
        """Boolean array of the window shape, True on the given points."""
        mask = np.zeros(self.shape, dtype=bool)
        mask.ravel()[self.index(points)] = True
        return mask

    def points_of(self, mask):
        return self.points[np.asarray(mask, dtype=bool).ravel()]

    def slices_for(self, box):
        """Array slices selecting `box` inside this window."""
        if not self.box.contains_box(box):
            raise GeometryError(f'{box} is not inside {self!r}')
        return tuple(slice(lo - wlo, hi - wlo)
                     for lo, hi, wlo in zip(box.lower, box.upper, self.box.lower))


# =============================================================================
# DISCONNECTION GEOMETRY
# =============================================================================

def sphere_radius(N, M):
    """
    The integer part [MN] of the sphere radius; MN >= N+1 is required.

    A tiny tolerance absorbs binary representation error in M (M = 1.1, N = 10).
    """
    if N < 0:
        raise GeometryError(f'N must be nonnegative, got {N}')
    radius = math.floor(M * N + 1e-9)
    if M * N + 1e-9 < N + 1:
        raise GeometryError(f'MN = {M * N:g} must be at least N+1 = {N + 1}')
    return radius


# =============================================================================
# COARSE LATTICE: BOX HIERARCHY AND COLUMNS
# =============================================================================

@dataclass(frozen=True)
class BoxHierarchy:
    """
    The four boxes attached to a site z of the coarse lattice L Z^d:

        B_z = z + [0, L)^d
        D_z = z + [-3L, 4L)^d
        U_z = z + [-KL + 1, L + KL - 1)^d
        B~_z = z + [-KL, L + KL)^d

    B_z ⊆ U_z ⊆ B~_z always holds; D_z ⊆ B~_z needs K >= 3 and D_z ⊆ U_z needs K >= 4.
    """

    z: tuple
    L: int
    K: int

    ASYMPTOTIC_REGIME_K = 100

    def __post_init__(self):
        z = tuple(int(v) for v in self.z)
        object.__setattr__(self, 'z', z)
        if self.L < 1:
            raise GeometryError(f'L must be >= 1, got {self.L}')
        if self.K < 2:
            raise InvalidConfigurationError(f'K must be >= 2, got {self.K}')
        if any(v % self.L for v in z):
            raise GeometryError(f'z={z} is not a site of the coarse lattice {self.L}Z^d')

    @property
    def d(self):
        return len(self.z)

    def _box(self, lo, hi):
        return BoxSpec(tuple(v + lo for v in self.z), tuple(v + hi for v in self.z))

    @property
    def B(self):
        return self._box(0, self.L)

    @property
    def D(self):
        return self._box(-3 * self.L, 4 * self.L)

    @property
    def U(self):
        return self._box(-self.K * self.L + 1, self.L + self.K * self.L - 1)

    @property
    def B_tilde(self):
        return self._box(-self.K * self.L, self.L + self.K * self.L)

    @property
    def asymptotic_regime(self):
        return self.K >= self.ASYMPTOTIC_REGIME_K

    @property
    def nested(self):
        return (self.D.contains_box(self.B) and self.U.contains_box(self.D)
                and self.B_tilde.contains_box(self.U))

    @staticmethod
    def separation(L, K):
        """Mutual l-infinity distance that keeps B~_z and U_z' disjoint."""
        return L + 2 * K * L


@dataclass(frozen=True)
class ColumnSpec:
    """
    A column of L-boxes attached to the face F_{e,N} of B_N, e = sign * e_axis.

    `footprint` is the lower corner of the common projection (the coordinates other
    than `axis`); boxes are ordered by increasing x·e, i.e. from ∂B_N outward.
    """

    axis: int
    sign: int
    footprint: tuple
    boxes: tuple

    @property
    def direction(self):
        d = len(self.footprint) + 1
        return tuple(self.sign if i == self.axis else 0 for i in range(d))

    @property
    def labels(self):
        return tuple(box.lower for box in self.boxes)

    def __len__(self):
        return len(self.boxes)


def _lattice_range(lo, hi, L):
    """Multiples z of L with lo <= z and z + L - 1 <= hi."""
    first = -((-lo) // L) * L
    return list(range(first, hi - L + 2, L))


def enumerate_columns(N, M, L, d=3):
    """
    All columns of L-boxes of L Z^d attached to the 2d faces of B_N.

    A column is a footprint of d-1 coordinates whose L-projection lies in the face,
    together with the boxes above it in {x·e > N} ∩ B_{[(M+1)N]}. Footprints are
    disjoint half-open boxes of the coarse lattice; a leftover strip of the face that
    does not fit a whole footprint is not assigned. Columns without boxes are omitted,
    so L > 2N + 1 (no footprint fits) gives an empty list.
    """
    sphere_radius(N, M)
    if L < 1:
        raise GeometryError(f'L must be >= 1, got {L}')
    outer = math.floor((M + 1) * N + 1e-9)
    feet = _lattice_range(-N, N, L)
    outward = {
        +1: _lattice_range(N + 1, outer, L),
        -1: sorted(_lattice_range(-outer, -N - 1, L), reverse=True),
    }
    columns = []
    for axis in range(d):
        for sign in (+1, -1):
            if not outward[sign]:
                continue
            for foot in itertools.product(feet, repeat=d - 1):
                boxes = []
                for level in outward[sign]:
                    lower = list(foot)
                    lower.insert(axis, level)
                    boxes.append(BoxSpec(tuple(lower), tuple(v + L for v in lower)))
                columns.append(ColumnSpec(axis, sign, tuple(foot), tuple(boxes)))
    if not columns:
        logger.warning('no columns fit: N=%s M=%s L=%s d=%s', N, M, L, d)
    return columns


def separated(sites, distance):
    """True when all pairs of sites are at l-infinity distance >= `distance`."""
    arr = as_points(sites)
    for i in range(len(arr)):
        if len(arr[i + 1:]) and np.abs(arr[i + 1:] - arr[i]).max(axis=1).min() < distance:
            return False
    return True
