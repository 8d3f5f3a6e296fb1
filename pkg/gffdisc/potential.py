"""
Potential theory of the simple random walk on Z^d.

Provides:
- The free Green function g by one-dimensional quadrature, and a cached GreenTable
- The killed walk on a finite set U (DirichletProblem): g_U, exit distributions,
  harmonic extensions, zero-boundary Gaussian sampling
- Grid Dirichlet solves on boxes (direct below the direct-solve limit, CG above)
- Equilibrium measures and capacities, by the equilibrium solve, the Dirichlet
  infimum and the variational energy of measures
- The Dirichlet form E(f, g)
- Capacities of large boxes and the extrapolated Brownian capacity of the cube

The quadrature rests on 1/(1 - φ(k)) = ∫_0^∞ e^{-t(1 - φ(k))} dt applied to the
Fourier representation of g, which factorizes into modified Bessel functions:

    g(x) = ∫_0^∞ Π_j e^{-t/d} I_{x_j}(t/d) dt.

The slowly decaying part of the integrand is the Gaussian kernel
(d / 2πt)^{d/2} exp(-d s² / 2t), whose integral is c_0 s^{2-d} in closed form; it is
subtracted and added back analytically.
"""

import itertools
import logging
import math
import os
import tempfile
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from django.conf import settings
from scipy import integrate, linalg, special
from scipy import sparse
from scipy.fft import dstn
from scipy.sparse import linalg as sparse_linalg

from .exceptions import (
    CapacityRangeError,
    GeometryError,
    IllConditionedError,
    InvalidArgumentError,
    UnsupportedDimensionError,
)
from .lattice import BoxSpec, PointIndex, as_points, boundary, inner_boundary, unique_points, unit_vectors
from .walks import GeneratorSteps, hit_or_escape

logger = logging.getLogger(__name__)

QUADRATURE_TOLERANCE = 1e-12

# Largest number of entries a dense Green table may hold
TABLE_ENTRY_LIMIT = 5_000_000


def far_field_constant(d):
    """c_0 = (d/2) Γ(d/2 - 1) π^{-d/2}, so that g(x) ~ c_0 |x|^{2-d}."""
    return (d / 2) * special.gamma(d / 2 - 1) * math.pi ** (-d / 2)


def check_dimension(d):
    if d < 3:
        raise UnsupportedDimensionError(d)


def _green_by_quadrature(x, d):
    x = np.abs(np.asarray(x, dtype=float))
    s2 = max(float(x @ x), 1.0)
    scale = d / (2 * math.pi)

    def integrand(t):
        pole = (scale / t) ** (d / 2) * math.exp(-d * s2 / (2 * t))
        return float(np.prod(special.ive(x, t / d))) - pole

    split = max(10.0, 2 * s2)
    options = dict(epsabs=QUADRATURE_TOLERANCE, epsrel=QUADRATURE_TOLERANCE, limit=500)
    head, _ = integrate.quad(integrand, 0.0, split, **options)
    tail, _ = integrate.quad(integrand, split, np.inf, **options)
    return far_field_constant(d) * s2 ** (1 - d / 2) + head + tail


def free_green(x, d=3, return_flag=False):
    """
    The Green function g(x) = g(x, 0) of the simple random walk.

    Displacements with |x|_inf beyond GFFDISC_GREEN_TABLE_MAX_RADIUS get the
    asymptotic value c_0 |x|^{2-d}; with `return_flag` the function returns
    (value, far_field) so callers can tell.
    """
    check_dimension(d)
    x = as_points(x, d)[0]
    far_field = int(np.abs(x).max(initial=0)) > settings.GFFDISC_GREEN_TABLE_MAX_RADIUS
    if far_field:
        logger.warning('g(%s) outside quadrature range, using c_0|x|^{2-d}', tuple(x))
        value = far_field_constant(d) * float(np.linalg.norm(x)) ** (2 - d)
    else:
        value = _green_by_quadrature(x, d)
    return (value, far_field) if return_flag else value


# =============================================================================
# GREEN TABLE
# =============================================================================

class GreenTable:
    """
    Values of g on the cube of displacements |x|_inf <= radius.

    The table is symmetric under sign changes and coordinate permutations, so only
    sorted absolute displacements are computed. Lookups beyond the radius fall back to
    c_0 |x|^{2-d}.
    """

    HEADER = '# gffdisc-green-table v1'

    def __init__(self, d, radius, values, tolerance=QUADRATURE_TOLERANCE):
        self.d = d
        self.radius = radius
        self.values = values
        self.tolerance = tolerance
        self.c0 = far_field_constant(d)

    @classmethod
    def build(cls, d, radius, base=None):
        check_dimension(d)
        values = np.zeros((radius + 1,) * d)
        computed = 0
        for key in itertools.combinations_with_replacement(range(radius + 1), d):
            if base is not None and key[-1] <= base.radius:
                value = base.values[key]
            else:
                value = _green_by_quadrature(key, d)
                computed += 1
            for perm in set(itertools.permutations(key)):
                values[perm] = value
        logger.info('Green table d=%d radius=%d built (%d quadratures)', d, radius, computed)
        return cls(d, radius, values)

    def lookup(self, displacements):
        """Values of g and a mask of the entries that used the far-field formula."""
        disp = np.abs(as_points(displacements, self.d))
        far = disp.max(axis=1, initial=0) > self.radius
        out = np.empty(len(disp))
        near = ~far
        out[near] = self.values[tuple(disp[near].T)]
        if far.any():
            norms = np.linalg.norm(disp[far].astype(float), axis=1)
            out[far] = self.c0 * norms ** (2 - self.d)
        return out, far

    def __call__(self, displacements):
        return self.lookup(displacements)[0]

    def edge_ratio(self):
        """g(x) |x|^{d-2} / c_0 at x = radius e_1."""
        return self.values[(self.radius,) + (0,) * (self.d - 1)] * self.radius ** (self.d - 2) / self.c0

    def save(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        lines = [self.HEADER, f'# d={self.d} radius={self.radius} tolerance={self.tolerance:g}']
        for key in itertools.combinations_with_replacement(range(self.radius + 1), self.d):
            lines.append(' '.join(str(k) for k in key) + f' {self.values[key]!r}')
        fd, tmp = tempfile.mkstemp(dir=path.parent, suffix='.tmp')
        with os.fdopen(fd, 'w') as handle:
            handle.write('\n'.join(lines) + '\n')
        os.replace(tmp, path)

    @classmethod
    def load(cls, path):
        with open(path) as handle:
            header = handle.readline().strip()
            if header != cls.HEADER:
                raise ValueError(f'{path}: not a Green table ({header!r})')
            meta = dict(item.split('=') for item in handle.readline().lstrip('#').split())
            d, radius = int(meta['d']), int(meta['radius'])
            values = np.zeros((radius + 1,) * d)
            for line in handle:
                parts = line.split()
                key = tuple(int(p) for p in parts[:d])
                for perm in set(itertools.permutations(key)):
                    values[perm] = float(parts[d])
        return cls(d, radius, values, float(meta['tolerance']))


_TABLES = {}


def _table_files(d):
    folder = Path(settings.GFFDISC_GREEN_TABLE_DIR)
    found = []
    for path in folder.glob(f'green_d{d}_r*.txt'):
        try:
            found.append((int(path.stem.rsplit('_r', 1)[1]), path))
        except ValueError:
            continue
    return sorted(found)


def green_table(d=3, radius=None):
    """
    A GreenTable covering `radius`, capped at GFFDISC_GREEN_TABLE_MAX_RADIUS.

    Tables are kept per process and cached on disk; a smaller cached table seeds
    the computation of a larger one.
    """
    check_dimension(d)
    cap = min(settings.GFFDISC_GREEN_TABLE_MAX_RADIUS, int(TABLE_ENTRY_LIMIT ** (1 / d)) - 1)
    radius = cap if radius is None else max(0, min(int(radius), cap))
    table = _TABLES.get(d)
    if table is not None and table.radius >= radius:
        return table
    base = table
    for file_radius, path in _table_files(d):
        if file_radius >= radius:
            try:
                table = GreenTable.load(path)
            except (OSError, ValueError, KeyError) as exc:
                logger.warning('ignoring unreadable Green table %s: %s', path, exc)
                continue
            _TABLES[d] = table
            return table
        if base is None or file_radius > base.radius:
            try:
                base = GreenTable.load(path)
            except (OSError, ValueError, KeyError):
                continue
    table = GreenTable.build(d, radius, base=base)
    try:
        table.save(Path(settings.GFFDISC_GREEN_TABLE_DIR) / f'green_d{d}_r{radius}.txt')
    except OSError as exc:
        logger.warning('could not cache Green table: %s', exc)
    _TABLES[d] = table
    return table


def _needed_radius(a, b):
    return int(max((a.max(axis=0) - b.min(axis=0)).max(), (b.max(axis=0) - a.min(axis=0)).max()))


def green_matrix(a, b=None):
    """Matrix g(a_i - b_j); b defaults to a."""
    a = as_points(a)
    b = a if b is None else as_points(b, a.shape[1])
    d = a.shape[1]
    out = np.empty((len(a), len(b)))
    if len(a) == 0 or len(b) == 0:
        return out
    table = green_table(d, _needed_radius(a, b))
    for start in range(0, len(a), 256):
        disp = a[start:start + 256, None, :] - b[None, :, :]
        out[start:start + 256] = table(disp.reshape(-1, d)).reshape(len(disp), len(b))
    return out


def green_potential(points, support, weights):
    """Σ_y g(x - y) w(y) for every x in `points`, without forming the full matrix."""
    points = as_points(points)
    support = as_points(support, points.shape[1])
    weights = np.asarray(weights, dtype=float)
    out = np.zeros(len(points))
    for start in range(0, len(points), 256):
        out[start:start + 256] = green_matrix(points[start:start + 256], support) @ weights
    return out


# =============================================================================
# KILLED WALK
# =============================================================================

def killed_laplacian(U):
    """Sparse I - P_U, the transition matrix of the walk killed on leaving U."""
    pts = unique_points(U)
    n, d = pts.shape
    steps = unit_vectors(d)
    neighbors = PointIndex(pts).lookup((pts[:, None, :] + steps[None]).reshape(-1, d))
    rows = np.repeat(np.arange(n), len(steps))
    keep = neighbors >= 0
    P = sparse.csr_matrix(
        (np.full(keep.sum(), 1.0 / (2 * d)), (rows[keep], neighbors[keep])), shape=(n, n))
    return (sparse.identity(n, format='csr') - P).tocsr()


class DirichletProblem:
    """
    The walk killed on leaving a finite set U.

    Operators act on vectors indexed by `points` (sorted, i.e. row-major when U is a
    box). Boxes are diagonalized exactly by the type-I discrete sine transform; other
    sets use a sparse LU factorization, or conjugate gradients above the direct-solve
    limit.
    """

    def __init__(self, U, d=None):
        if isinstance(U, BoxSpec):
            self.box = U
            self.points = U.points()
        else:
            self.points = unique_points(U, d)
            if len(self.points) == 0:
                raise GeometryError('U must be nonempty')
            lo, hi = self.points.min(axis=0), self.points.max(axis=0) + 1
            self.box = BoxSpec(tuple(lo), tuple(hi))
            if self.box.size != len(self.points):
                self.box = None
        self.d = self.points.shape[1]
        self.n = len(self.points)
        self.index = PointIndex(self.points)
        self._lu = None

    # --- structure ---------------------------------------------------------

    @cached_property
    def boundary(self):
        if self.box is not None:
            return self.box.outer_boundary()
        return boundary(self.points)

    @cached_property
    def coupling(self):
        """Sparse (n, |∂U|) matrix with 1/2d where u ∈ U neighbors y ∈ ∂U."""
        steps = unit_vectors(self.d)
        nb = (self.points[:, None, :] + steps[None]).reshape(-1, self.d)
        rows = np.repeat(np.arange(self.n), len(steps))
        outside = self.index.lookup(nb) < 0
        cols = PointIndex(self.boundary).lookup(nb[outside])
        return sparse.csr_matrix(
            (np.full(len(cols), 1.0 / (2 * self.d)), (rows[outside], cols)),
            shape=(self.n, len(self.boundary)))

    @cached_property
    def matrix(self):
        return killed_laplacian(self.points)

    @cached_property
    def _eigenvalues(self):
        grids = np.ix_(*[np.arange(1, s + 1) * (math.pi / (s + 1)) for s in self.box.shape])
        return 1.0 - sum(np.cos(g) for g in grids) / self.d

    @cached_property
    def _incidence(self):
        """Edge incidence over edges with an endpoint in U, so that A = DᵀD / 2d."""
        steps = unit_vectors(self.d)
        rows, cols, vals = [], [], []
        edge = 0
        for k, step in enumerate(steps):
            nb = self.index.lookup(self.points + step)
            positive = k % 2 == 0
            take = (nb < 0) | positive
            u = np.flatnonzero(take)
            e = edge + np.arange(len(u))
            rows.append(e)
            cols.append(u)
            vals.append(np.ones(len(u)))
            inner = nb[u] >= 0
            rows.append(e[inner])
            cols.append(nb[u][inner])
            vals.append(-np.ones(inner.sum()))
            edge += len(u)
        return sparse.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(edge, self.n))

    @property
    def noise_dimension(self):
        """Number of standard normals one zero-boundary sample consumes."""
        return self.n if self.box is not None else self._incidence.shape[0]

    # --- linear algebra ----------------------------------------------------

    def _dst(self, arr, power):
        shaped = arr.reshape(self.box.shape + (-1,))
        axes = tuple(range(self.d))
        coef = dstn(shaped, type=1, norm='ortho', axes=axes)
        coef *= (self._eigenvalues ** power)[..., None]
        return dstn(coef, type=1, norm='ortho', axes=axes).reshape(arr.shape)

    def solve(self, rhs):
        """A^{-1} rhs for rhs of shape (n,) or (n, k)."""
        rhs = np.asarray(rhs, dtype=float)
        if self.box is not None:
            return self._dst(rhs, -1.0)
        if self.n <= settings.GFFDISC_DIRECT_SOLVE_LIMIT:
            if self._lu is None:
                self._lu = sparse_linalg.splu(self.matrix.tocsc())
            return self._lu.solve(rhs)
        columns = rhs[:, None] if rhs.ndim == 1 else rhs
        out = np.empty_like(columns)
        for j in range(columns.shape[1]):
            out[:, j] = _conjugate_gradients(self.matrix, columns[:, j])
        return out[:, 0] if rhs.ndim == 1 else out

    def green_columns(self, ys):
        """Columns g_U(·, y) for the given points y (zero columns for y ∉ U)."""
        rows = self.index.lookup(ys)
        rhs = np.zeros((self.n, len(rows)))
        inside = np.flatnonzero(rows >= 0)
        rhs[rows[inside], inside] = 1.0
        return self.solve(rhs)

    def killed_green(self, x, y):
        i, j = self.index.lookup(np.stack([as_points(x, self.d)[0], as_points(y, self.d)[0]]))
        if i < 0 or j < 0:
            return 0.0
        return float(self.green_columns(as_points(y, self.d))[i, 0])

    def exit_distribution(self, x):
        """(points, probabilities) of X_{T_U} for the walk started at x."""
        x = as_points(x, self.d)[:1]
        i = self.index.lookup(x)[0]
        if i < 0:
            return x, np.ones(1)
        column = self.green_columns(x)[:, 0]
        return self.boundary, self.coupling.T @ column

    def exit_matrix(self, xs):
        """Rows P_x[X_{T_U} = y] over y ∈ ∂U for x in U."""
        return (self.coupling.T @ self.green_columns(xs)).T

    def harmonic_extension(self, boundary_values):
        """Values on U of the harmonic function equal to `boundary_values` on ∂U."""
        return self.solve(self.coupling @ np.asarray(boundary_values, dtype=float))

    def transform_noise(self, normals):
        """
        Map standard normals of shape (k, noise_dimension) to k samples with
        covariance g_U, returned with shape (k, n).
        """
        normals = np.atleast_2d(np.asarray(normals, dtype=float))
        if self.box is not None:
            return self._dst(normals.T, -0.5).T
        forcing = self._incidence.T @ normals.T / math.sqrt(2 * self.d)
        return np.asarray(self.solve(forcing)).reshape(self.n, -1).T


def _conjugate_gradients(operator, rhs, tol=None):
    tol = settings.GFFDISC_SOLVER_TOLERANCE if tol is None else tol
    iterations = [0]

    def count(_):
        iterations[0] += 1

    solution, info = sparse_linalg.cg(operator, rhs, rtol=tol, atol=0.0,
                                      maxiter=20 * len(rhs), callback=count)
    if info != 0:
        raise IllConditionedError(f'conjugate gradients did not converge (info={info})')
    logger.debug('CG converged in %d iterations on %d unknowns', iterations[0], len(rhs))
    return solution


def killed_green(U, x, y):
    """g_U(x, y); zero when x or y is outside U."""
    return DirichletProblem(U).killed_green(x, y)


# =============================================================================
# GRID DIRICHLET SOLVES
# =============================================================================

def _neighbor_mean(padded):
    d = padded.ndim
    core = [slice(1, -1)] * d
    total = np.zeros(tuple(s - 2 for s in padded.shape))
    for axis in range(d):
        lo, hi = list(core), list(core)
        lo[axis], hi[axis] = slice(0, -2), slice(2, None)
        total += padded[tuple(lo)] + padded[tuple(hi)]
    return total / (2 * d)


def solve_on_grid(box, fixed, values=None, outer=None, source=None):
    """
    Solve (I - P) u = source on the free sites of a box.

    Args:
        box: BoxSpec of the grid
        fixed: boolean array of the box shape, True where u is prescribed
        values: prescribed values on fixed sites (array or scalar)
        outer: array of shape box.shape + 2 whose outer layer holds the values on ∂box
            (zero when omitted)
        source: right-hand side on free sites

    Returns:
        u as an array of the box shape.
    """
    if box.size > settings.GFFDISC_MAX_GRID_SITES:
        raise GeometryError(f'grid of {box.size} sites exceeds GFFDISC_MAX_GRID_SITES')
    d = box.d
    fixed = np.asarray(fixed, dtype=bool)
    free = ~fixed
    core = (slice(1, -1),) * d
    prescribed = np.where(fixed, 0.0 if values is None else values, 0.0)
    padded = np.zeros(tuple(s + 2 for s in box.shape)) if outer is None else np.array(outer, dtype=float)
    padded[core] = prescribed
    rhs = _neighbor_mean(padded)[free]
    if source is not None:
        rhs = rhs + np.asarray(source, dtype=float)[free]
    n = int(free.sum())
    if n == 0:
        return prescribed
    if n <= settings.GFFDISC_DIRECT_SOLVE_LIMIT:
        matrix = killed_laplacian(box.points()[free.ravel()])
        solution = sparse_linalg.spsolve(matrix.tocsc(), rhs)
    else:
        work = np.zeros_like(padded)
        interior = work[core]

        def matvec(v):
            interior[free] = np.ravel(v)
            return np.ravel(v) - _neighbor_mean(work)[free]

        operator = sparse_linalg.LinearOperator((n, n), matvec=matvec, dtype=float)
        solution = _conjugate_gradients(operator, rhs)
    result = prescribed.copy()
    result[free] = solution
    return result


def green_box_oracle(x, d=3, radius=16):
    """
    g(x) from a killed-box solve of (I - P)G = δ_0 on B_radius with boundary data
    c_0 |y|^{2-d} on ∂B_radius.
    """
    check_dimension(d)
    box = BoxSpec.ball(radius, d)
    source = np.zeros(box.shape)
    source[(radius,) * d] = 1.0
    shell = BoxSpec.ball(radius + 1, d)
    norms = np.sqrt(sum(c.astype(float) ** 2 for c in shell.coordinates()))
    outer = far_field_constant(d) * np.maximum(norms, 1.0) ** (2 - d)
    G = solve_on_grid(box, np.zeros(box.shape, dtype=bool), outer=outer, source=source)
    x = as_points(x, d)[0]
    if not box.contains(x)[0]:
        raise GeometryError(f'x={tuple(x)} outside B_{radius}')
    return float(G[tuple(x + radius)])


# =============================================================================
# DIRICHLET FORM
# =============================================================================

def _on_box(f):
    """(BoxSpec, values) for a Field-like object or a (box, values) pair."""
    if hasattr(f, 'window') and hasattr(f, 'values'):
        return f.window.box, np.asarray(f.values, dtype=float)
    box, values = f
    return box, np.asarray(values, dtype=float)


def _common_box(boxes):
    lower = tuple(min(b.lower[i] for b in boxes) for i in range(boxes[0].d))
    upper = tuple(max(b.upper[i] for b in boxes) for i in range(boxes[0].d))
    return BoxSpec(lower, upper)


def _embed(box, values, target):
    out = np.zeros(target.shape)
    out[tuple(slice(lo - tlo, hi - tlo) for lo, hi, tlo in zip(box.lower, box.upper, target.lower))] = values
    return out


class DirichletForm:
    """
    E(f, g) = ½ Σ_{x∼y} (1/2d)(f(y) - f(x))(g(y) - g(x)), the sum running over ordered
    neighbor pairs, for finitely supported functions given on boxes (zero outside).
    """

    def __init__(self, d=3):
        check_dimension(d)
        self.d = d

    def pairing(self, f, g):
        (fb, fv), (gb, gv) = _on_box(f), _on_box(g)
        box = _common_box([fb, gb])
        fp = np.pad(_embed(fb, fv, box), 1)
        gp = np.pad(_embed(gb, gv, box), 1)
        total = 0.0
        for axis in range(self.d):
            total += float((np.diff(fp, axis=axis) * np.diff(gp, axis=axis)).sum())
        return total / (2 * self.d)

    def energy(self, f):
        box, values = _on_box(f)
        padded = np.pad(values, 1)
        total = 0.0
        for axis in range(self.d):
            total += float(np.square(np.diff(padded, axis=axis)).sum())
        return total / (2 * self.d)

    def laplacian(self, f):
        """(box, Δf) on the box grown by one site, Δf(x) = mean of f over neighbors - f(x)."""
        box, values = _on_box(f)
        grown = box.expand(1)
        padded = np.pad(values, 2)
        return grown, _neighbor_mean(padded) - padded[(slice(1, -1),) * self.d]


# =============================================================================
# EQUILIBRIUM MEASURE AND CAPACITY
# =============================================================================

@dataclass(frozen=True, eq=False)
class EquilibriumData:
    """
    Equilibrium measure of K.

    `measure` is indexed like `points` (K sorted) and vanishes off the inner boundary;
    `green` is the Green matrix over `support` = ∂_i K, which is what the solve uses
    (K and ∂_i K have the same equilibrium measure).
    """

    points: np.ndarray
    measure: np.ndarray
    capacity: float
    support: np.ndarray
    support_weights: np.ndarray
    green: np.ndarray = field(repr=False)

    @property
    def normalized(self):
        return self.measure / self.capacity

    def hitting_probability(self, points):
        """P_x[H_K < ∞] = Σ_y g(x, y) e_K(y)."""
        return green_potential(points, self.support, self.support_weights)


def equilibrium(K):
    """Equilibrium measure e_K = G^{-1} 1 on ∂_i K and cap(K) = Σ e_K."""
    points = unique_points(K)
    if len(points) == 0:
        raise InvalidArgumentError('equilibrium measure needs a nonempty K')
    support = inner_boundary(points)
    G = green_matrix(support)
    ones = np.ones(len(support))
    if len(support) <= settings.GFFDISC_DIRECT_SOLVE_LIMIT:
        try:
            factor = linalg.cho_factor(G, lower=True)
        except linalg.LinAlgError as exc:
            raise IllConditionedError(f'Green matrix of |K|={len(support)} is not positive definite') from exc
        weights = linalg.cho_solve(factor, ones)
    else:
        logger.warning('equilibrium: %d support points, using conjugate gradients', len(support))
        weights = _conjugate_gradients(G, ones)
    if weights.min() < -1e-9 * weights.max():
        raise IllConditionedError('negative equilibrium weights; Green table accuracy fault')
    weights = np.clip(weights, 0.0, None)
    measure = np.zeros(len(points))
    measure[PointIndex(points).lookup(support)] = weights
    return EquilibriumData(points, measure, float(weights.sum()), support, weights, G)


def capacity(K):
    return equilibrium(K).capacity


def energy_of_measure(nu, K):
    """E(ν) = Σ ν(x) ν(y) g(x, y) for a probability vector ν indexed like sorted K."""
    points = unique_points(K)
    nu = np.asarray(nu, dtype=float)
    if nu.shape != (len(points),):
        raise InvalidArgumentError(f'ν has shape {nu.shape}, K has {len(points)} points')
    if (nu < 0).any():
        raise InvalidArgumentError('ν must be nonnegative')
    if abs(nu.sum() - 1.0) > 1e-10:
        raise InvalidArgumentError(f'ν must sum to 1, sums to {nu.sum():.12g}')
    charged = nu > 0
    weights = nu[charged]
    return float(weights @ green_matrix(points[charged]) @ weights)


def capacity_via_dirichlet(K, R):
    """
    Energy of the harmonic potential of K in B_R (1 on K, 0 on ∂B_R).

    This is cap(K) relative to B_R, an upper-biased estimate decreasing to cap(K).
    """
    points = unique_points(K)
    if len(points) == 0:
        return 0.0
    d = points.shape[1]
    box = BoxSpec.ball(R, d)
    if not box.contains(points).all():
        raise GeometryError(f'K is not contained in B_{R}')
    fixed = np.zeros(box.shape, dtype=bool)
    fixed.ravel()[np.ravel_multi_index(tuple((points + R).T), box.shape)] = True
    potential = solve_on_grid(box, fixed, values=1.0)
    return DirichletForm(d).energy((box, potential))


def _reciprocal_extrapolation(radii, values):
    """Intercept at 1/R = 0 of a straight-line fit of 1/value against 1/R."""
    slope, intercept = np.polyfit(1.0 / np.asarray(radii, dtype=float),
                                  1.0 / np.asarray(values, dtype=float), 1)
    return 1.0 / intercept


@dataclass(frozen=True)
class CapacityRoutes:
    equilibrium: float
    dirichlet: float
    variational: float
    dirichlet_by_radius: dict

    @property
    def spread(self):
        values = (self.equilibrium, self.dirichlet, self.variational)
        return max(values) / min(values) - 1.0


def capacity_routes(K, radii=(20, 40)):
    """cap(K) by the equilibrium solve, the extrapolated Dirichlet infimum and 1/E(ν̄)."""
    eq = equilibrium(K)
    raw = {R: capacity_via_dirichlet(eq.points, R) for R in radii}
    dirichlet = _reciprocal_extrapolation(list(raw), list(raw.values()))
    variational = 1.0 / energy_of_measure(eq.normalized, eq.points)
    return CapacityRoutes(eq.capacity, dirichlet, variational, raw)


def _box_support_size(N, d):
    return (2 * N + 1) ** d - max(2 * N - 1, 0) ** d


def largest_box_radius(d=3, guard=2):
    """Largest N whose far-field capacity grid fits GFFDISC_MAX_GRID_SITES."""
    side = int(settings.GFFDISC_MAX_GRID_SITES ** (1 / d))
    while (side + 1) ** d <= settings.GFFDISC_MAX_GRID_SITES:
        side += 1
    return max((side - 1) // (2 * guard), 0)


def box_capacity(N, d=3, guard=2):
    """
    cap(B_N). Small boxes use the equilibrium solve; above the direct-solve limit the
    harmonic potential is solved on B_{guard N} with boundary data cap · c_0|y|^{2-d},
    which determines cap self-consistently.
    """
    check_dimension(d)
    if _box_support_size(N, d) <= settings.GFFDISC_DIRECT_SOLVE_LIMIT:
        return capacity(BoxSpec.ball(N, d))
    largest = largest_box_radius(d, guard)
    if N > largest:
        raise CapacityRangeError(N, largest)
    R = guard * N
    box = BoxSpec.ball(R, d)
    inside = box.linf_grid() <= N
    shell = BoxSpec.ball(R + 1, d)
    norms = np.sqrt(sum(c.astype(float) ** 2 for c in shell.coordinates()))
    far = far_field_constant(d) * np.maximum(norms, 1.0) ** (2 - d)
    far[(slice(1, -1),) * d] = 0.0
    core = (slice(1, -1),) * d

    hit = np.zeros_like(far)
    hit[core] = solve_on_grid(box, inside, values=1.0)
    flux_hit = float((1.0 - _neighbor_mean(hit)[inside]).sum())

    tail = far.copy()
    tail[core] = solve_on_grid(box, inside, values=0.0, outer=far)
    flux_tail = float(_neighbor_mean(tail)[inside].sum())
    value = flux_hit / (1.0 + flux_tail)
    logger.info('cap(B_%d) = %.10g (far-field corrected, R=%d)', N, value, R)
    return value


@dataclass(frozen=True)
class CubeCapacityEstimate:
    """d × lim cap(B_N)/N^{d-2}, extrapolated linearly in 1/N."""

    value: float
    error: float
    radii: tuple
    ratios: tuple
    pre_asymptotic: bool


def brownian_capacity_cube(d=3, N_list=(10, 20, 40)):
    N_list = tuple(int(n) for n in N_list)
    if len(N_list) < 2 or any(b <= a for a, b in zip(N_list, N_list[1:])) or N_list[0] < 1:
        raise InvalidArgumentError(f'N_list must be increasing positive with >= 2 entries, got {N_list}')
    ratios = tuple(box_capacity(N, d) / N ** (d - 2) for N in N_list)
    (n1, n2), (s1, s2) = N_list[-2:], ratios[-2:]
    limit = (n2 * s2 - n1 * s1) / (n2 - n1)
    pre_asymptotic = N_list[0] < 2
    if pre_asymptotic:
        logger.warning('brownian_capacity_cube: N=%d is pre-asymptotic', N_list[0])
    return CubeCapacityEstimate(d * limit, d * abs(s2 - s1), N_list, ratios, pre_asymptotic)


def fit_capacity_constants(N_list, d=3):
    """(c, c') with c N^{d-2} <= cap(B_N) <= c' N^{d-2} over N_list."""
    ratios = [box_capacity(N, d) / N ** (d - 2) for N in N_list]
    return min(ratios), max(ratios)


# =============================================================================
# SWEEPING
# =============================================================================

@dataclass(frozen=True, eq=False)
class SweepingReport:
    points: np.ndarray
    estimate: np.ndarray
    stderr: np.ndarray
    exact: np.ndarray
    total: float
    total_stderr: float
    max_deviation: float
    max_z: float
    bias_bound: float
    n: int


def verify_sweeping(K, K_outer, n_mc, rng, guard_factor=4):
    """
    Monte Carlo check of e_K(y) = P_{e_K'}[H_K < ∞, X_{H_K} = y] for K ⊆ K'.

    Walks start from the normalized equilibrium measure of K' and stop on hitting K
    or on leaving a guard box; `bias_bound` bounds the probability that an escaped
    walk would still have hit K.
    """
    if n_mc < 1:
        raise InvalidArgumentError('n_mc must be positive')
    inner_pts = unique_points(K)
    outer_eq = equilibrium(K_outer)
    if not PointIndex(outer_eq.points).contains(inner_pts).all():
        raise InvalidArgumentError('K must be a subset of K\'')
    inner_eq = equilibrium(inner_pts)

    d = inner_pts.shape[1]
    lo, hi = outer_eq.points.min(axis=0), outer_eq.points.max(axis=0)
    center = tuple(int(v) for v in (lo + hi) // 2)
    reach = max(int((hi - lo).max() // 2 + 1), 1)
    guard = BoxSpec.ball(int(math.ceil(guard_factor * reach)), d, center)

    starts = outer_eq.support[rng.choice(len(outer_eq.support), size=n_mc,
                                         p=outer_eq.support_weights / outer_eq.capacity)]
    landing = hit_or_escape(starts, PointIndex(inner_pts), guard, GeneratorSteps(rng, d))
    freq = np.bincount(landing[landing >= 0], minlength=len(inner_pts)) / n_mc
    estimate = outer_eq.capacity * freq
    stderr = outer_eq.capacity * np.sqrt(freq * (1 - freq) / n_mc)
    deviation = np.abs(estimate - inner_eq.measure)
    with np.errstate(divide='ignore', invalid='ignore'):
        z = np.where(deviation == 0, 0.0, deviation / stderr)
    hit_frac = float((landing >= 0).mean())
    bias = float(inner_eq.hitting_probability(guard.outer_boundary()).max())
    return SweepingReport(
        points=inner_pts, estimate=estimate, stderr=stderr, exact=inner_eq.measure,
        total=outer_eq.capacity * hit_frac,
        total_stderr=outer_eq.capacity * math.sqrt(hit_frac * (1 - hit_frac) / n_mc),
        max_deviation=float(deviation.max()), max_z=float(z.max()),
        bias_bound=bias, n=n_mc,
    )
