"""
Gaussian free field on Z^d.

Provides:
- Field, a real function on a Window, with a versioned plain-text snapshot format
- Exact samplers: dense Cholesky of the Green matrix (sample_free), the zero-boundary
  field with covariance g_U (sample_zero_boundary) and its restriction to a window
  inside a large guard box (sample_embedded)
- The Markov decomposition φ = h^U + ψ^U
- Dirichlet energies, Cameron-Martin tilts and the tilt profile of the disconnection
  lower bound
- Rate-function and entropy-inequality calculators
"""

import functools
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from django.conf import settings
from scipy import linalg
from scipy.stats import norm

from .exceptions import (
    DenseLimitError,
    GeometryError,
    IllConditionedError,
    InvalidArgumentError,
    RateDomainError,
)
from .lattice import BoxSpec, PointIndex, Window, as_points, unique_points
from .montecarlo import run_batches
from .potential import (
    DirichletForm,
    DirichletProblem,
    brownian_capacity_cube,
    check_dimension,
    equilibrium,
    green_matrix,
    green_table,
)

logger = logging.getLogger(__name__)


# =============================================================================
# FIELDS
# =============================================================================

class Field:
    """Real values on a window, stored as an array of the window shape."""

    SNAPSHOT_HEADER = '# gffdisc-field v1'

    def __init__(self, window, values, seed=None):
        values = np.asarray(values, dtype=float)
        if values.size != window.size:
            raise InvalidArgumentError(f'{values.size} values for a window of {window.size} sites')
        values = values.reshape(window.shape)
        if not np.isfinite(values).all():
            raise InvalidArgumentError('field values must be finite')
        self.window = window
        self.values = values
        self.seed = seed

    def __repr__(self):
        return f'Field({self.window!r})'

    @property
    def d(self):
        return self.window.d

    def at(self, points):
        """Values at the given points, which must lie in the window."""
        return self.values.ravel()[self.window.index(points)]

    def restrict(self, box):
        window = Window(box)
        return Field(window, self.values[self.window.slices_for(box)], self.seed)

    def __add__(self, other):
        if isinstance(other, Field):
            if other.window != self.window:
                raise GeometryError('fields live on different windows')
            other = other.values
        return Field(self.window, self.values + other, self.seed)

    def to_text(self):
        box = self.window.box
        lines = [
            self.SNAPSHOT_HEADER,
            f'# d={self.d}',
            '# lower=' + ' '.join(map(str, box.lower)),
            '# upper=' + ' '.join(map(str, box.upper)),
            f'# seed={"" if self.seed is None else self.seed}',
        ]
        lines.extend(repr(float(v)) for v in self.values.ravel())
        return '\n'.join(lines) + '\n'

    def write(self, path):
        Path(path).write_text(self.to_text())

    @classmethod
    def read(cls, path):
        lines = Path(path).read_text().splitlines()
        if not lines or lines[0].strip() != cls.SNAPSHOT_HEADER:
            raise InvalidArgumentError(f'{path}: not a field snapshot')
        meta = {}
        for line in lines[1:5]:
            key, _, value = line.lstrip('# ').partition('=')
            meta[key] = value
        lower = tuple(int(v) for v in meta['lower'].split())
        upper = tuple(int(v) for v in meta['upper'].split())
        seed = int(meta['seed']) if meta.get('seed') else None
        values = np.array([float(v) for v in lines[5:]])
        return cls(Window(BoxSpec(lower, upper)), values, seed)


def _origin_box(shape):
    return BoxSpec((0,) * len(shape), tuple(shape))


@functools.lru_cache(maxsize=8)
def _free_factor(shape):
    """Lower Cholesky factor of the Green matrix of a box of this shape."""
    G = green_matrix(_origin_box(shape).points())
    try:
        return linalg.cholesky(G, lower=True)
    except linalg.LinAlgError as exc:
        raise IllConditionedError(f'Green matrix of a {shape} box is not positive definite') from exc


@functools.lru_cache(maxsize=8)
def _box_problem(shape):
    return DirichletProblem(_origin_box(shape))


def dirichlet_problem(U):
    """DirichletProblem of U, shared across calls when U is a box."""
    if isinstance(U, Window):
        U = U.box
    if isinstance(U, BoxSpec):
        problem = _box_problem(U.shape)
        return _TranslatedProblem(problem, np.asarray(U.lower, dtype=np.int64))
    return DirichletProblem(U)


class _TranslatedProblem:
    """A cached box problem moved to another corner; point arguments are translated."""

    def __init__(self, problem, offset):
        self._problem = problem
        self._offset = offset
        self.points = problem.points + offset
        self.boundary = problem.boundary + offset
        self.box = problem.box.translate(offset)
        self.n = problem.n
        self.d = problem.d

    def __getattr__(self, name):
        return getattr(self._problem, name)

    def green_columns(self, ys):
        return self._problem.green_columns(as_points(ys, self.d) - self._offset)

    def killed_green(self, x, y):
        return self._problem.killed_green(as_points(x, self.d)[0] - self._offset,
                                          as_points(y, self.d)[0] - self._offset)

    def exit_distribution(self, x):
        points, probs = self._problem.exit_distribution(as_points(x, self.d)[:1] - self._offset)
        return points + self._offset, probs

    def exit_matrix(self, xs):
        return self._problem.exit_matrix(as_points(xs, self.d) - self._offset)


# =============================================================================
# SAMPLERS
# =============================================================================

def _normals(rngs, size):
    return np.stack([rng.standard_normal(size) for rng in rngs])


def free_samples(window, rngs):
    """One dense free-field sample per generator, as an array (k, *window.shape)."""
    if window.size > settings.GFFDISC_DENSE_LIMIT:
        raise DenseLimitError(window.size, settings.GFFDISC_DENSE_LIMIT)
    factor = _free_factor(window.shape)
    return (_normals(rngs, window.size) @ factor.T).reshape((len(rngs),) + window.shape)


def sample_free(window, rng):
    """Exact GFF sample on a window by dense factorization of (g(x, y))."""
    return Field(window, free_samples(window, [rng])[0])


# Values per transform batch when sampling zero-boundary fields
TRANSFORM_BATCH_VALUES = 8_000_000


def zero_boundary_samples(U, rngs):
    """Samples of the field with covariance g_U, as an array (k, |U|) over sorted U."""
    problem = dirichlet_problem(U)
    step = max(1, TRANSFORM_BATCH_VALUES // problem.noise_dimension)
    parts = [problem.transform_noise(_normals(rngs[start:start + step], problem.noise_dimension))
             for start in range(0, len(rngs), step)]
    return np.concatenate(parts)


class PointSetSampler:
    """Exact GFF on a finite point set, by dense Cholesky of its Green matrix."""

    def __init__(self, points, limit=None):
        self.points = unique_points(points)
        limit = settings.GFFDISC_BOUNDARY_DENSE_LIMIT if limit is None else limit
        if len(self.points) > limit:
            raise DenseLimitError(len(self.points), limit)
        self.index = PointIndex(self.points)

    def __len__(self):
        return len(self.points)

    @functools.cached_property
    def factor(self):
        logger.debug('factorizing the Green matrix of %d points', len(self.points))
        try:
            return linalg.cholesky(green_matrix(self.points), lower=True, overwrite_a=True)
        except linalg.LinAlgError as exc:
            raise IllConditionedError(f'Green matrix of {len(self.points)} points is not positive definite') from exc

    def rows(self, points):
        rows = self.index.lookup(points)
        if (rows < 0).any():
            raise GeometryError('points outside the sampled set')
        return rows

    def sample_values(self, rngs):
        return _normals(rngs, len(self.points)) @ self.factor.T


def sample_zero_boundary(U, rng):
    """
    Field with covariance g_U, zero off U.

    The returned window is the bounding box of U grown by one site, so it also shows
    the zero values on ∂U.
    """
    problem = dirichlet_problem(U)
    lo, hi = problem.points.min(axis=0) - 1, problem.points.max(axis=0) + 2
    window = Window(BoxSpec(tuple(lo), tuple(hi)))
    values = np.zeros(window.size)
    values[window.index(problem.points)] = problem.transform_noise(
        rng.standard_normal(problem.noise_dimension)[None])[0]
    return Field(window, values)


def guard_box(window, guard_factor):
    """The l-infinity ball around the window's center with radius guard_factor × its half side."""
    if guard_factor < 2:
        raise InvalidArgumentError(f'guard_factor must be >= 2, got {guard_factor}')
    half = max(math.ceil(max(window.shape) / 2), 1)
    return BoxSpec.ball(math.ceil(guard_factor * half), window.d, window.box.center)


def embedded_samples(window, guard_factor, rngs, keep_guard=False):
    guard = guard_box(window, guard_factor)
    guard_values = zero_boundary_samples(guard, rngs).reshape((len(rngs),) + guard.shape)
    inside = (slice(None),) + Window(guard).slices_for(window.box)
    values = guard_values[inside]
    return (values, guard_values) if keep_guard else values


def sample_embedded(window, guard_factor, rng, keep_guard=False):
    """
    Restriction to `window` of the zero-boundary field of a guard box.

    The covariance is g_G instead of g, and g(x, y) - g_G(x, y) is bounded by
    `embedding_bias`. With `keep_guard` the guard-box field is returned as well.
    """
    values, guard_values = embedded_samples(window, guard_factor, [rng], keep_guard=True)
    field = Field(window, values[0])
    if keep_guard:
        return field, Field(Window(guard_box(window, guard_factor)), guard_values[0])
    return field


@dataclass(frozen=True)
class EmbeddingBias:
    exact: float
    bound: float
    guard: BoxSpec


def embedding_bias(window, guard_factor):
    """
    sup over window pairs of g(x, y) - g_G(x, y) = E_x[g(X_{T_G} - y)].

    The difference is a covariance, so its supremum sits on the diagonal. `bound` is
    the cruder sup_{z ∈ ∂G, y ∈ window} g(z - y).
    """
    guard = guard_box(window, guard_factor)
    problem = dirichlet_problem(guard)
    points = window.points
    table = green_table(window.d, max(guard.shape) + 1)
    exact = 0.0
    for start in range(0, len(points), 64):
        xs = points[start:start + 64]
        exits = problem.exit_matrix(xs)
        far = table((problem.boundary[None, :, :] - xs[:, None, :]).reshape(-1, window.d))
        exact = max(exact, float((exits * far.reshape(len(xs), -1)).sum(axis=1).max()))
    bound = 0.0
    for start in range(0, len(problem.boundary), 1024):
        bound = max(bound, float(green_matrix(problem.boundary[start:start + 1024], points).max()))
    return EmbeddingBias(exact, bound, guard)


class FieldSampler:
    """
    GFF sampler on a fixed window.

    'dense' is exact; 'embedded' samples inside a guard box and carries the embedding
    bias; 'auto' picks dense whenever the window fits GFFDISC_DENSE_LIMIT.
    """

    METHODS = ('auto', 'dense', 'embedded')

    def __init__(self, window, method='auto', guard_factor=4.0):
        if method not in self.METHODS:
            raise InvalidArgumentError(f'unknown sampling method {method!r}')
        if method == 'auto':
            method = 'dense' if window.size <= settings.GFFDISC_DENSE_LIMIT else 'embedded'
        if method == 'embedded':
            guard_box(window, guard_factor)
        self.window = window
        self.method = method
        self.guard_factor = guard_factor

    def __repr__(self):
        return f'FieldSampler({self.window!r}, {self.method})'

    def sample_values(self, rngs):
        if self.method == 'dense':
            return free_samples(self.window, rngs)
        return embedded_samples(self.window, self.guard_factor, rngs)

    def sample(self, rng):
        return Field(self.window, self.sample_values([rng])[0])

    @functools.cached_property
    def bias(self):
        if self.method == 'dense':
            return 0.0
        return embedding_bias(self.window, self.guard_factor).bound


# =============================================================================
# MARKOV DECOMPOSITION
# =============================================================================

@dataclass(frozen=True, eq=False)
class Decomposition:
    """φ = h + ψ with h harmonic in U and ψ supported in U."""

    U: np.ndarray
    h: Field
    psi: Field


def decompose(phi, U):
    """Split φ into the harmonic average h^U and the local field ψ^U."""
    problem = dirichlet_problem(U)
    needed = np.concatenate([problem.points, problem.boundary])
    if not phi.window.contains(needed).all():
        raise GeometryError(f'U and ∂U are not contained in {phi.window!r}')
    inside = phi.window.index(problem.points)
    h = phi.values.copy()
    h.ravel()[inside] = problem.harmonic_extension(phi.at(problem.boundary))
    psi = phi.values - h
    return Decomposition(problem.points, Field(phi.window, h, phi.seed), Field(phi.window, psi, phi.seed))


def harmonicity_residual(field, U):
    """max over x ∈ U of |f(x) - mean of f over the neighbors of x|."""
    U = unique_points(U, field.d)
    mean = 0.0
    for axis in range(field.d):
        for sign in (1, -1):
            step = np.zeros(field.d, dtype=np.int64)
            step[axis] = sign
            mean = mean + field.at(U + step)
    return float(np.abs(field.at(U) - mean / (2 * field.d)).max())


def dirichlet_energy(f):
    """E(f, f) for a Field (zero outside its window) or a (BoxSpec, values) pair."""
    box = f.window.box if isinstance(f, Field) else f[0]
    return DirichletForm(box.d).energy(f)


# =============================================================================
# TILTING
# =============================================================================

def _plateau_taper(t, a, b):
    """C¹ profile: 1 on [0, a], quadratic falloff to 0 at b."""
    t = np.abs(t)
    s = np.clip((t - a) / (b - a), 0.0, 1.0)
    return np.where(s <= 0.5, 1.0 - 2.0 * s ** 2, 2.0 * (1.0 - s) ** 2)


@dataclass(frozen=True)
class TiltProfile:
    """
    Shift profile g(y) = plateau × Π_j χ(y_j), with χ = 1 on [-(1+η), 1+η] and a
    quadratic falloff reaching 0 at ±b, b = 1 + η + taper (M - 1 - η) < M.

    f_N(x) = g(x / N).
    """

    plateau: float
    N: int
    M: float
    eta: float = 0.0
    taper: float = 0.9
    d: int = 3

    def __post_init__(self):
        check_dimension(self.d)
        if self.N < 1:
            raise InvalidArgumentError(f'N must be >= 1, got {self.N}')
        if not 0 < self.taper <= 1:
            raise InvalidArgumentError(f'taper must be in (0, 1], got {self.taper}')
        if self.eta < 0 or 1 + self.eta >= self.M:
            raise InvalidArgumentError(f'need 0 <= eta and 1 + eta < M (eta={self.eta}, M={self.M})')

    @classmethod
    def for_disconnection(cls, h, alpha, N, M, epsilon=0.1, eta=0.1, d=3):
        """Profile with plateau -(h - α + ε), the shift used for the lower bound."""
        return cls(-(h - alpha + epsilon), N, M, eta, d=d)

    @property
    def inner(self):
        return 1.0 + self.eta

    @property
    def outer(self):
        return self.inner + self.taper * (self.M - self.inner)

    def profile(self, y):
        y = np.asarray(y, dtype=float)
        return self.plateau * np.prod(_plateau_taper(y, self.inner, self.outer), axis=-1)

    @property
    def support(self):
        return BoxSpec.ball(math.ceil(self.outer * self.N), self.d)

    def shift(self, window):
        """The field f_N on a window."""
        return Field(window, self.profile(window.points / self.N))

    def continuum_energy(self):
        """(1/2d) ∫ |∇g|², in closed form for the quadratic taper."""
        w = self.outer - self.inner
        derivative_sq = 8.0 / (3.0 * w)
        value_sq = 2.0 * self.inner + 23.0 * w / 30.0
        return 0.5 * self.plateau ** 2 * derivative_sq * value_sq ** (self.d - 1)


@dataclass(frozen=True, eq=False)
class TiltedSample:
    field: Field
    shift: Field
    entropy: float


def sample_tilted(window, f, rng, sampler=None):
    """
    φ + f for a base sample φ. The law of φ + f is the tilt exp{E(f, φ) - ½E(f, f)}
    of the GFF; its relative entropy ½E(f, f) is returned alongside.
    """
    if isinstance(f, TiltProfile):
        f = f.shift(window)
    if f.window != window:
        raise GeometryError(f'shift lives on {f.window!r}, not {window!r}')
    sampler = sampler or FieldSampler(window)
    return TiltedSample(sampler.sample(rng) + f, f, 0.5 * dirichlet_energy(f))


def entropy_lower_bound(p_tilde, entropy):
    """log P[A] >= log P̃[A] - (H(P̃|P) + 1/e) / P̃[A]."""
    if not 0 <= p_tilde <= 1:
        raise InvalidArgumentError(f'p_tilde must be a probability, got {p_tilde}')
    if p_tilde == 0:
        return -math.inf
    return math.log(p_tilde) - (entropy + math.exp(-1)) / p_tilde


# =============================================================================
# RATE FUNCTIONS
# =============================================================================

RATE_VARIANTS = (
    'gff-lower',
    'gff-upper',
    'gff-contour',
    'gff-high-dimension',
    'interlacement',
    'interlacement-lower',
    'srw',
)


@functools.lru_cache(maxsize=4)
def _cube_capacity(d):
    return brownian_capacity_cube(d).value


def _require(condition, message):
    if not condition:
        raise RateDomainError(message)


def rate_function(variant, d=3, cap_cube=None, h=None, alpha=None, u=None,
                  epsilon=0.0, eta=0.0):
    """
    Limits of N^{2-d} log P for the disconnection bounds, in closed form.

    Args:
        variant: one of RATE_VARIANTS
        d: dimension
        cap_cube: Brownian capacity of [-1, 1]^d; computed by brownian_capacity_cube
            when omitted
        h: critical level (h_** for gff-lower, h̄ for gff-upper / interlacement / srw,
            h_0 for gff-high-dimension, u_** for interlacement-lower)
        alpha: level of the excursion set (GFF variants)
        u: interlacement intensity
        epsilon, eta: plateau margin and core enlargement of gff-lower
    """
    check_dimension(d)
    if variant not in RATE_VARIANTS:
        raise InvalidArgumentError(f'unknown rate variant {variant!r}; choose from {RATE_VARIANTS}')
    cap = _cube_capacity(d) if cap_cube is None else float(cap_cube)

    if variant == 'gff-contour':
        _require(alpha is not None, 'gff-contour needs alpha')
        _require(alpha <= 0, f'alpha <= 0 violated (alpha={alpha})')
        return -(alpha ** 2) * cap / (2 * d)

    if variant in ('gff-lower', 'gff-upper', 'gff-high-dimension'):
        _require(h is not None and alpha is not None, f'{variant} needs h and alpha')
        _require(alpha <= h, f'alpha <= h violated (alpha={alpha}, h={h})')
        if variant == 'gff-lower':
            _require(epsilon >= 0 and eta >= 0, f'epsilon >= 0 and eta >= 0 violated ({epsilon}, {eta})')
            return -((h - alpha + epsilon) ** 2) * (1 + eta) ** (d - 2) * cap / (2 * d)
        return -((h - alpha) ** 2) * cap / (2 * d)

    if variant == 'srw':
        _require(h is not None, 'srw needs h')
        return -(h ** 2) * cap / (2 * d)

    _require(h is not None and u is not None, f'{variant} needs h and u')
    _require(u >= 0, f'u >= 0 violated (u={u})')
    if variant == 'interlacement':
        _require(u <= h ** 2 / 2, f'u <= h^2/2 violated (u={u}, h={h})')
        return -((math.sqrt(h ** 2 / 2) - math.sqrt(u)) ** 2) * cap / d
    _require(u <= h, f'u <= u_** violated (u={u}, u_**={h})')
    return -((math.sqrt(h) - math.sqrt(u)) ** 2) * cap / d


# =============================================================================
# VARIANCE AND INDEPENDENCE CHECKS
# =============================================================================

@dataclass(frozen=True)
class VarianceIdentity:
    """Var(Σ ν̄(x) φ_x) for ν̄ the normalized equilibrium measure of B_N."""

    symbolic: float
    reciprocal_capacity: float
    sample_variance: float
    sample_variance_stderr: float
    n: int
    seed: int


def _weighted_sums(window, weights, rngs):
    return list(free_samples(window, rngs).reshape(len(rngs), -1) @ weights)


def variance_identity(N, d=3, n_mc=10_000, seed=0, workers=None):
    box = BoxSpec.ball(N, d)
    eq = equilibrium(box)
    nu = eq.normalized
    symbolic = float(nu @ green_matrix(eq.points) @ nu)
    sums = np.asarray(run_batches(functools.partial(_weighted_sums, Window(box), nu), n_mc, seed, workers))
    variance = float(sums.var(ddof=1))
    fourth = float(np.mean((sums - sums.mean()) ** 4))
    stderr = math.sqrt(max(fourth - variance ** 2, 0.0) / n_mc)
    return VarianceIdentity(symbolic, 1.0 / eq.capacity, variance, stderr, n_mc, seed)


def correlation_matrix(a, b):
    """Sample correlations between the columns of a (n, p) and b (n, q)."""
    a = a - a.mean(axis=0)
    b = b - b.mean(axis=0)
    scale = np.outer(np.sqrt((a ** 2).sum(axis=0)), np.sqrt((b ** 2).sum(axis=0)))
    return (a.T @ b) / scale


@dataclass(frozen=True)
class CrossCorrelation:
    """
    Largest |corr| over the tested pairs, with the per-pair threshold 4/√n and the
    Bonferroni threshold for the family of pairs at level 1%.
    """

    max_abs: float
    threshold: float
    family_threshold: float
    pairs: int
    exceed_fraction: float
    n: int
    seed: int


def family_threshold(pairs, n, level=0.01):
    return float(norm.isf(level / (2 * pairs)) / math.sqrt(n))


def _decomposed_pairs(window, problem, inside_rows, outside_rows, rngs):
    values = free_samples(window, rngs).reshape(len(rngs), -1)
    boundary_rows = window.index(problem.boundary)
    h_inside = problem.harmonic_extension(values[:, boundary_rows].T).reshape(problem.n, -1).T
    psi = values[:, window.index(problem.points)] - h_inside
    return list(np.concatenate([psi[:, inside_rows], values[:, outside_rows]], axis=1))


def decomposition_cross_correlation(window_radius=6, U_radius=3, n_mc=10_000, seed=0,
                                    d=3, max_pairs=None, workers=None):
    """
    Empirical corr(ψ^U_x, φ_y) for x ∈ U and y in the window outside U, U = B_{U_radius}.

    With `max_pairs` a deterministic spread of the pairs is tested instead of all.
    """
    if U_radius + 1 > window_radius:
        raise GeometryError('U and its boundary must fit inside the window')
    window = Window.ball(window_radius, d)
    U = BoxSpec.ball(U_radius, d)
    problem = dirichlet_problem(U)
    inside_rows = np.arange(problem.n)
    outside_points = window.points[~U.contains(window.points)]
    outside_rows = window.index(outside_points)
    if max_pairs is not None:
        k = max(1, int(math.isqrt(max_pairs)))
        inside_rows = inside_rows[np.linspace(0, problem.n - 1, k).astype(int)]
        outside_rows = outside_rows[np.linspace(0, len(outside_rows) - 1, k).astype(int)]
    columns = np.asarray(run_batches(
        functools.partial(_decomposed_pairs, window, problem, inside_rows, outside_rows),
        n_mc, seed, workers))
    corr = correlation_matrix(columns[:, :len(inside_rows)], columns[:, len(inside_rows):])
    threshold = 4.0 / math.sqrt(n_mc)
    return CrossCorrelation(
        max_abs=float(np.abs(corr).max()), threshold=threshold,
        family_threshold=family_threshold(corr.size, n_mc), pairs=int(corr.size),
        exceed_fraction=float((np.abs(corr) > threshold).mean()), n=n_mc, seed=seed,
    )

