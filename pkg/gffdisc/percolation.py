"""
Level-set percolation of the lattice GFF.

Provides:
- Level masks E^{≥α} and their cluster labels (nearest-neighbor or *-connectivity)
- Crossing probabilities P[B_L ↔ ∂B_{2L}] and the disconnection events A_N
- Maximal and minimal contours surrounding B_N and the capacity bound check
- The Z-field of harmonic averages over separated L-boxes
- ψ-good / h-good classification of L-boxes and the bad-column census
"""

import functools
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage, stats

from .exceptions import (
    EstimationError,
    GeometryError,
    InvalidArgumentError,
    InvalidConfigurationError,
)
from .gff import (
    CrossCorrelation,
    Field,
    FieldSampler,
    PointSetSampler,
    TiltProfile,
    correlation_matrix,
    dirichlet_energy,
    dirichlet_problem,
    entropy_lower_bound,
    family_threshold,
)
from .lattice import (
    BoxHierarchy,
    BoxSpec,
    PointIndex,
    Window,
    as_points,
    enumerate_columns,
    separated,
    sphere_radius,
    unit_vectors,
)
from .montecarlo import McEstimate, run_batches
from .potential import box_capacity, capacity, equilibrium, green_potential

logger = logging.getLogger(__name__)

CONNECTIVITIES = ('nearest', 'star')


# =============================================================================
# LEVEL SETS AND CLUSTERS
# =============================================================================

@dataclass(frozen=True, eq=False)
class LevelMask:
    """The excursion set E^{≥α} of a field, as a boolean array over its window."""

    window: Window
    mask: np.ndarray
    alpha: float

    @classmethod
    def from_field(cls, phi, alpha):
        return cls(phi.window, phi.values >= alpha, float(alpha))

    @property
    def count(self):
        return int(self.mask.sum())


def connectivity_structure(d, connectivity='nearest'):
    if connectivity == 'nearest':
        return ndimage.generate_binary_structure(d, 1)
    if connectivity == 'star':
        return ndimage.generate_binary_structure(d, d)
    raise InvalidArgumentError(f'unknown connectivity {connectivity!r}; choose from {CONNECTIVITIES}')


class ClusterLabels:
    """
    Connected components of a boolean mask.

    `labels` has the mask shape: -1 off the mask, otherwise the smallest linear site
    index of the cluster. Per-cluster arrays (`roots`, `sizes`, `diameters`) are
    aligned and sorted by root.
    """

    def __init__(self, window, mask, connectivity='nearest'):
        mask = np.asarray(mask, dtype=bool)
        raw, count = ndimage.label(mask, structure=connectivity_structure(mask.ndim, connectivity))
        self.window = window
        self.connectivity = connectivity
        self.count = int(count)
        if count:
            index = np.arange(mask.size).reshape(mask.shape)
            roots = ndimage.minimum(index, labels=raw, index=np.arange(1, count + 1))
            self.roots = np.asarray(roots, dtype=np.int64)
            self.sizes = np.bincount(raw.ravel(), minlength=count + 1)[1:]
            self.diameters = np.array([max(s.stop - s.start for s in slc) - 1
                                       for slc in ndimage.find_objects(raw)], dtype=np.int64)
        else:
            self.roots = np.zeros(0, dtype=np.int64)
            self.sizes = np.zeros(0, dtype=np.int64)
            self.diameters = np.zeros(0, dtype=np.int64)
        lut = np.concatenate([[-1], self.roots])
        self.labels = lut[raw]

    def __len__(self):
        return self.count

    def label_at(self, points):
        return self.labels.ravel()[self.window.index(points)]

    def connected(self, x, y):
        a, b = self.label_at(np.stack([as_points(x)[0], as_points(y)[0]]))
        return bool(a >= 0 and a == b)

    def members(self, root):
        return self.window.points_of(self.labels == root)


def clusters(mask, connectivity='nearest'):
    """Cluster labels of a LevelMask."""
    return ClusterLabels(mask.window, mask.mask, connectivity)


def _shares_cluster(labels, first, second):
    """True when some labelled cluster meets both boolean regions."""
    a = np.unique(labels[first & (labels > 0)])
    b = np.unique(labels[second & (labels > 0)])
    return np.intersect1d(a, b, assume_unique=True).size > 0


# =============================================================================
# CROSSING
# =============================================================================

@functools.lru_cache(maxsize=16)
def _crossing_regions(L, d):
    box = BoxSpec.ball(2 * L + 1, d)
    grid = box.linf_grid()
    return grid <= L, grid == 2 * L + 1


def crossing_event(phi, alpha, L):
    """B_L ↔ ∂B_{2L} in E^{≥α}; the window must be B_{2L+1}."""
    box = BoxSpec.ball(2 * L + 1, phi.d)
    if phi.window.box != box:
        phi = phi.restrict(box)
    inner, layer = _crossing_regions(L, phi.d)
    labels, _ = ndimage.label(phi.values >= alpha, structure=connectivity_structure(phi.d))
    return _shares_cluster(labels, inner, layer)


def _crossing_batch(sampler, alphas, L, rngs):
    values = sampler.sample_values(rngs)
    inner, layer = _crossing_regions(L, sampler.window.d)
    structure = connectivity_structure(sampler.window.d)
    out = []
    for sample in values:
        row = [_shares_cluster(ndimage.label(sample >= a, structure=structure)[0], inner, layer)
               for a in alphas]
        out.append(np.asarray(row, dtype=float))
    return out


def crossing_curve(alphas, L, n_mc, seed, d=3, sampler=None, workers=None):
    """
    Crossing probabilities over an α-grid, all evaluated on the same samples, so the
    curve is nonincreasing in α sample by sample.
    """
    if L < 1:
        raise GeometryError(f'L must be >= 1, got {L}')
    alphas = [float(a) for a in alphas]
    sampler = sampler or FieldSampler(Window.ball(2 * L + 1, d))
    if sampler.window.box != BoxSpec.ball(2 * L + 1, d):
        raise GeometryError(f'crossing needs a sampler on B_{2 * L + 1}, got {sampler.window!r}')
    hits = np.asarray(run_batches(functools.partial(_crossing_batch, sampler, alphas, L),
                                  n_mc, seed, workers))
    return [McEstimate.from_samples(hits[:, i], seed) for i in range(len(alphas))]


def crossing_prob(alpha, L, n_mc, seed, d=3, sampler=None, workers=None):
    return crossing_curve([alpha], L, n_mc, seed, d, sampler, workers)[0]


# =============================================================================
# DISCONNECTION
# =============================================================================

def _check_kappa(N, kappa):
    if not 0 < kappa < 0.1:
        raise InvalidArgumentError(f'kappa must be in (0, 1/10), got {kappa}')
    if math.floor((1 + kappa) * N) < N + 1:
        raise InvalidArgumentError(f'(1 + kappa) N = {(1 + kappa) * N:g} must be at least N + 1')


@functools.lru_cache(maxsize=32)
def _sphere_regions(N, R, d, kappa=None):
    """Source and target masks over B_R: ∂B_N (or B_{[(1+κ)N]}) and S_N."""
    box = BoxSpec.ball(R, d)
    grid = box.linf_grid()
    if kappa is None:
        on_face = sum((np.abs(c) == N + 1).astype(np.int64) for c in box.coordinates())
        source = (grid == N + 1) & (on_face == 1)
    else:
        source = grid <= math.floor((1 + kappa) * N)
    return source, grid == R


def disconnected(open_mask, N, R, kappa=None):
    """
    True when no nearest-neighbor path in `open_mask` (an array over B_R) joins ∂B_N
    to the sphere |x|∞ = R.
    """
    open_mask = np.asarray(open_mask, dtype=bool)
    source, target = _sphere_regions(N, R, open_mask.ndim, kappa)
    labels, _ = ndimage.label(open_mask, structure=connectivity_structure(open_mask.ndim))
    return not _shares_cluster(labels, source, target)


def _sphere_values(phi, N, M):
    R = sphere_radius(N, M)
    box = BoxSpec.ball(R, phi.d)
    if not phi.window.box.contains_box(box):
        raise GeometryError(f'window {phi.window!r} does not cover B_{R}')
    return phi.values[phi.window.slices_for(box)], R


def disconnection_event(phi, alpha, N, M, kappa=None):
    """
    A_N = {∂B_N not connected to S_N in E^{≥α}}, S_N = {|x|∞ = [MN]}.

    With `kappa` the source is the whole box B_{[(1+κ)N]}; that event implies A_N.
    """
    if kappa is not None:
        _check_kappa(N, kappa)
    values, R = _sphere_values(phi, N, M)
    return disconnected(values >= alpha, N, R, kappa)


def infinite_disconnection_event(phi, alpha, N):
    """∂B_N has no path in E^{≥α} to the outer layer of the window."""
    box = BoxSpec.ball(N + 1, phi.d)
    if not phi.window.box.contains_box(box.expand(1)):
        raise GeometryError(f'window {phi.window!r} does not strictly contain B_{N + 1}')
    grid = phi.window.box.linf_grid()
    faces = sum((np.abs(c) == N + 1).astype(np.int64) for c in phi.window.box.coordinates())
    source = (grid == N + 1) & (faces == 1)
    labels, _ = ndimage.label(phi.values >= alpha, structure=connectivity_structure(phi.d))
    return not _shares_cluster(labels, source, phi.window.box.inner_boundary_mask())


def _disconnection_batch(sampler, alphas, N, M, kappa, rngs):
    R = sphere_radius(N, M)
    inside = sampler.window.slices_for(BoxSpec.ball(R, sampler.window.d))
    out = []
    for sample in sampler.sample_values(rngs):
        values = sample[inside]
        out.append(np.asarray([disconnected(values >= a, N, R, kappa) for a in alphas], dtype=float))
    return out


def disconnection_sampler(N, M, d=3, method='auto', guard_factor=4.0):
    return FieldSampler(Window.ball(sphere_radius(N, M), d), method, guard_factor)


def disconnection_curve(alphas, N, M, n_mc, seed, d=3, sampler=None, kappa=None, workers=None):
    """P[A_N] over an α-grid on common samples (nondecreasing in α sample by sample)."""
    if kappa is not None:
        _check_kappa(N, kappa)
    sampler = sampler or disconnection_sampler(N, M, d)
    R = sphere_radius(N, M)
    if not sampler.window.box.contains_box(BoxSpec.ball(R, d)):
        raise GeometryError(f'sampler window {sampler.window!r} does not cover B_{R}')
    alphas = [float(a) for a in alphas]
    hits = np.asarray(run_batches(
        functools.partial(_disconnection_batch, sampler, alphas, N, M, kappa), n_mc, seed, workers))
    return [McEstimate.from_samples(hits[:, i], seed) for i in range(len(alphas))]


def disconnection_prob(alpha, N, M, n_mc, seed, d=3, sampler=None, kappa=None, workers=None):
    return disconnection_curve([alpha], N, M, n_mc, seed, d, sampler, kappa, workers)[0]


# =============================================================================
# CONTOURS
# =============================================================================

@dataclass(frozen=True, eq=False)
class Contour:
    """A contour C = ∂(Int C) around B_N, with Int C finite and connected."""

    points: np.ndarray
    interior: np.ndarray
    N: int

    def surrounds(self):
        return bool(PointIndex(self.interior).contains(BoxSpec.ball(self.N, self.interior.shape[1])).all())

    def __len__(self):
        return len(self.points)


def _nn_dilation(mask):
    return ndimage.binary_dilation(mask, structure=connectivity_structure(mask.ndim))


def maximal_contour(phi, alpha, N, M):
    """
    Outermost contour surrounding B_N inside B_{[MN]} on which φ < α, or None when A_N
    fails.

    O is the part of E^{≥α} ∪ {|x|∞ = [MN]+1} connected to the outer layer; Int C is the
    component of the origin in the complement of O ∪ ∂O.

    ∂(B_N ∪ the clusters of E^{≥α} at ∂B_N) is the innermost contour instead; see
    minimal_contour.
    """
    values, R = _sphere_values(phi, N, M)
    d = phi.d
    big = BoxSpec.ball(R + 1, d)
    open_set = big.inner_boundary_mask()
    open_set[(slice(1, -1),) * d] = values >= alpha
    labels, _ = ndimage.label(open_set, structure=connectivity_structure(d))
    outside = labels == labels[(0,) * d]
    blocked = _nn_dilation(outside)
    core = big.linf_grid() <= N
    if (blocked & core).any():
        return None
    free, _ = ndimage.label(~blocked, structure=connectivity_structure(d))
    interior = free == free[(R + 1,) * d]
    window = Window(big)
    contour = _nn_dilation(interior) & ~interior
    return Contour(window.points_of(contour), window.points_of(interior), N)


def minimal_contour(phi, alpha, N, M):
    """∂(B_N ∪ the clusters of E^{≥α} at ∂B_N), or None when they reach S_N."""
    values, R = _sphere_values(phi, N, M)
    d = phi.d
    source, target = _sphere_regions(N, R, d)
    labels, _ = ndimage.label(values >= alpha, structure=connectivity_structure(d))
    touching = np.unique(labels[source & (labels > 0)])
    if touching.size and np.isin(labels[target], touching).any():
        return None
    box = BoxSpec.ball(R, d)
    interior = (box.linf_grid() <= N) | (np.isin(labels, touching) & (labels > 0))
    window = Window(box)
    contour = _nn_dilation(interior) & ~interior
    return Contour(window.points_of(contour), window.points_of(interior), N)


def clopper_pearson_upper(successes, n, confidence=0.99):
    """One-sided upper confidence bound for a binomial proportion."""
    if successes >= n:
        return 1.0
    return float(stats.beta.ppf(confidence, successes + 1, n - successes))


@dataclass(frozen=True)
class ContourBoundReport:
    alpha: float
    N: int
    M: float
    estimate: McEstimate
    upper: float
    confidence: float
    capacity: float
    bound: float
    sampler_bias: float

    @property
    def passed(self):
        return self.upper <= self.bound


def contour_bound_check(alpha, N, M, n_mc, seed, d=3, confidence=0.99, sampler=None, workers=None):
    """
    Checks P[A_N] <= 2 exp(-α² cap(B_N) / 2) for α < 0: PASS when the one-sided
    Clopper-Pearson upper bound on P[A_N] stays below the analytic bound.
    """
    if alpha >= 0:
        raise InvalidArgumentError(f'contour bound needs alpha < 0, got {alpha}')
    sampler = sampler or disconnection_sampler(N, M, d)
    estimate = disconnection_prob(alpha, N, M, n_mc, seed, d, sampler, workers=workers)
    cap = box_capacity(N, d)
    bound = 2.0 * math.exp(-0.5 * alpha ** 2 * cap)
    successes = int(round(estimate.mean * estimate.n))
    upper = clopper_pearson_upper(successes, estimate.n, confidence)
    report = ContourBoundReport(alpha, N, M, estimate, upper, confidence, cap, bound, sampler.bias)
    logger.info('contour bound: p=%.4g upper=%.4g bound=%.4g (cap(B_%d)=%.6g) %s',
                estimate.mean, upper, bound, N, cap, 'PASS' if report.passed else 'FAIL')
    return report


# =============================================================================
# TILTED DISCONNECTION
# =============================================================================

@dataclass(frozen=True)
class TiltReport:
    """Entropy lower bound on log P[A_N] from the tilted law, next to the direct estimate."""

    alpha: float
    plateau: float
    tilted: McEstimate
    direct: McEstimate
    entropy: float
    lower_bound: float
    direct_log_upper: float

    @property
    def consistent(self):
        return self.lower_bound <= self.direct_log_upper


def _tilted_batch(sampler, shift, alpha, N, M, rngs):
    R = sphere_radius(N, M)
    tilted, direct = [], []
    for sample in sampler.sample_values(rngs):
        tilted.append(disconnected(sample + shift >= alpha, N, R))
        direct.append(disconnected(sample >= alpha, N, R))
    return list(np.stack([tilted, direct], axis=1).astype(float))


def tilted_disconnection(alpha, N, M, plateau, n_mc, seed, d=3, eta=0.1, sampler=None,
                         confidence=1 - 6.3e-5, workers=None):
    """
    P̃[A_N] under the shift φ + f_N with f_N = plateau on B_{(1+η)N}, the relative
    entropy ½E(f_N, f_N), the resulting lower bound on log P[A_N] and, on the same
    samples, a one-sided upper bound on log P[A_N] from the untilted field.
    """
    R = sphere_radius(N, M)
    window = Window.ball(R, d)
    sampler = sampler or FieldSampler(window)
    if sampler.window != window:
        raise GeometryError(f'tilted disconnection samples on B_{R}, got {sampler.window!r}')
    profile = TiltProfile(plateau, N, M, eta=eta, d=d)
    shift = profile.shift(window)
    entropy = 0.5 * dirichlet_energy(shift)
    hits = np.asarray(run_batches(
        functools.partial(_tilted_batch, sampler, shift.values, alpha, N, M), n_mc, seed, workers))
    tilted = McEstimate.from_samples(hits[:, 0], seed)
    direct = McEstimate.from_samples(hits[:, 1], seed)
    lower = entropy_lower_bound(tilted.mean, entropy)
    upper = clopper_pearson_upper(int(round(direct.mean * n_mc)), n_mc, confidence)
    report = TiltReport(alpha, plateau, tilted, direct, entropy, lower, math.log(upper))
    logger.info('tilt: P~=%.4g H=%.4g lower=%.4g direct log upper=%.4g',
                tilted.mean, entropy, lower, report.direct_log_upper)
    return report


# =============================================================================
# Z-FIELD OF HARMONIC AVERAGES
# =============================================================================

@dataclass(frozen=True, eq=False)
class ZFieldConfig:
    """
    Separated L-box sites 𝒞 with weights λ(z) = ν̄(B_z), ν̄ the normalized equilibrium
    measure of C = ∪ B_z.
    """

    sites: np.ndarray
    L: int
    K: int
    weights: np.ndarray
    capacity: float
    box_capacity: float

    @classmethod
    def build(cls, sites, L, K, d=3):
        sites = as_points(sites, d)
        if len(sites) == 0:
            raise InvalidConfigurationError('a Z-field needs at least one site')
        hierarchies = [BoxHierarchy(tuple(z), L, K) for z in sites]
        distance = BoxHierarchy.separation(L, K)
        if not separated(sites, distance):
            raise InvalidConfigurationError(f'sites must be at mutual distance >= L + 2KL = {distance}')
        C = np.concatenate([h.B.points() for h in hierarchies])
        eq = equilibrium(C)
        index = PointIndex(eq.points)
        nu = eq.normalized
        weights = np.array([nu[index.lookup(h.B.points())].sum() for h in hierarchies])
        cfg = cls(sites, L, K, weights, eq.capacity, capacity(hierarchies[0].B))
        if not cfg.weights_bounded:
            logger.warning('λ(B) <= cap(B)/cap(C) fails: max λ=%.6g', weights.max())
        return cfg

    @property
    def d(self):
        return self.sites.shape[1]

    @property
    def hierarchies(self):
        return [BoxHierarchy(tuple(z), self.L, self.K) for z in self.sites]

    @property
    def weights_bounded(self):
        return bool((self.weights <= self.box_capacity / self.capacity + 1e-12).all())

    @property
    def asymptotic_regime(self):
        return self.K >= BoxHierarchy.ASYMPTOTIC_REGIME_K

    def default_f(self):
        """f(B_z) = z + (L // 2, ..., L // 2), the center of B_z."""
        return self.sites + self.L // 2

    def check_f(self, f):
        f = as_points(f, self.d)
        if len(f) != len(self.sites):
            raise InvalidArgumentError(f'f has {len(f)} points for {len(self.sites)} boxes')
        for h, x in zip(self.hierarchies, f):
            if not h.D.contains(x)[0]:
                raise InvalidArgumentError(f'f({h.z}) = {tuple(x)} is not in D_z')
        return f


def zfield_variance(cfg, f=None):
    """
    Var(Z_f) = Σ λ(B)λ(B') E[h_B(f(B)) h_B'(f(B'))], each expectation a double sum of g
    against exit distributions; cross terms are g(f(B), f(B')) when D_z ⊆ B~_z (K >= 3).
    """
    f = cfg.default_f() if f is None else cfg.check_f(f)
    measures = [dirichlet_problem(h.U).exit_distribution(x) for h, x in zip(cfg.hierarchies, f)]
    total = 0.0
    for i, (pts_i, mu_i) in enumerate(measures):
        for j, (pts_j, mu_j) in enumerate(measures):
            if j < i:
                continue
            if i != j and cfg.K >= 3:
                term = float(green_potential(f[i], f[j], np.ones(1))[0])
            else:
                term = float(mu_i @ green_potential(pts_i, pts_j, mu_j))
            total += cfg.weights[i] * cfg.weights[j] * term * (1 if i == j else 2)
    return total


class ZFieldSampler:
    """
    Joint exact samples of the harmonic averages h_B on D_B for every box of a config.

    φ is sampled densely on ∪ (∂U_z ∪ D_z \\ U_z); h_B is the harmonic extension of the
    boundary values inside U_z and equals φ on D_z \\ U_z.
    """

    def __init__(self, cfg):
        self.cfg = cfg
        self.problems = [dirichlet_problem(h.U) for h in cfg.hierarchies]
        pieces = []
        self._layout = []
        for h, problem in zip(cfg.hierarchies, self.problems):
            dpts = h.D.points()
            outside = ~h.U.contains(dpts)
            pieces.extend([problem.boundary, dpts[outside]])
            self._layout.append((dpts, outside))
        self.sampler = PointSetSampler(np.concatenate(pieces))
        self._rows = []
        for (dpts, outside), problem in zip(self._layout, self.problems):
            self._rows.append((
                self.sampler.rows(problem.boundary),
                self.sampler.rows(dpts[outside]),
                Window(problem.box).index(dpts[~outside]),
            ))

    def harmonic_averages(self, values):
        """h_B over D_B for every box, as arrays (k, |D_B|) in row-major order of D_B."""
        k = len(values)
        out = []
        for problem, (dpts, outside), (b_rows, out_rows, in_rows) in zip(self.problems, self._layout, self._rows):
            h_U = problem.harmonic_extension(values[:, b_rows].T).reshape(problem.n, -1).T
            h_D = np.empty((k, len(dpts)))
            h_D[:, outside] = values[:, out_rows]
            h_D[:, ~outside] = h_U[:, in_rows]
            out.append(h_D)
        return out

    def sample(self, rngs):
        return self.harmonic_averages(self.sampler.sample_values(rngs))


def _zfield_batch(sampler, f_rows, rngs):
    hs = sampler.sample(rngs)
    weights = sampler.cfg.weights
    z_f = sum(w * h[:, r] for w, h, r in zip(weights, hs, f_rows))
    z_inf = sum(w * h.min(axis=1) for w, h in zip(weights, hs))
    return list(np.stack([z_f, z_inf], axis=1))


def _f_rows(cfg, f):
    return [int(Window(h.D).index(x)[0]) for h, x in zip(cfg.hierarchies, f)]


def _zfield_samples(cfg, f, n_mc, seed, workers):
    sampler = ZFieldSampler(cfg)
    return np.asarray(run_batches(functools.partial(_zfield_batch, sampler, _f_rows(cfg, f)),
                                  n_mc, seed, workers))


@dataclass(frozen=True)
class ZFieldVariance:
    exact: float
    sample_variance: float
    stderr: float
    n: int
    seed: int

    @property
    def z_score(self):
        return abs(self.sample_variance - self.exact) / self.stderr if self.stderr > 0 else math.inf


def _variance_of(cfg, f, z, seed):
    variance = float(z.var(ddof=1))
    fourth = float(np.mean((z - z.mean()) ** 4))
    stderr = math.sqrt(max(fourth - variance ** 2, 0.0) / len(z))
    return ZFieldVariance(zfield_variance(cfg, f), variance, stderr, len(z), seed)


def zfield_variance_mc(cfg, f=None, n_mc=10_000, seed=0, workers=None):
    """Exact Var(Z_f) next to the sample variance of Z_f over independent fields."""
    f = cfg.default_f() if f is None else cfg.check_f(f)
    return _variance_of(cfg, f, _zfield_samples(cfg, f, n_mc, seed, workers)[:, 0], seed)


@dataclass(frozen=True)
class ZInfStats:
    """E[Z] for Z = inf_f Z_f = Σ λ(B) min_{D_B} h_B, and the ratio |E Z| (|𝒞|/cap C)^{-1/2} K."""

    estimate: McEstimate
    ratio: float
    ratio_stderr: float
    K: int
    sites: int


def _inf_stats_of(cfg, z, seed):
    estimate = McEstimate.from_samples(z, seed)
    scale = (len(cfg.sites) / cfg.capacity) ** -0.5 * cfg.K
    return ZInfStats(estimate, abs(estimate.mean) * scale, estimate.stderr * scale, cfg.K, len(cfg.sites))


def zfield_inf_stats(cfg, n_mc, seed, workers=None):
    return _inf_stats_of(cfg, _zfield_samples(cfg, cfg.default_f(), n_mc, seed, workers)[:, 1], seed)


def zfield_statistics(cfg, n_mc, seed, f=None, workers=None):
    """Variance check of Z_f and E[Z] from one set of samples."""
    f = cfg.default_f() if f is None else cfg.check_f(f)
    samples = _zfield_samples(cfg, f, n_mc, seed, workers)
    return _variance_of(cfg, f, samples[:, 0], seed), _inf_stats_of(cfg, samples[:, 1], seed)


def _local_fields_batch(sampler, problems, pair_rows, rngs):
    values = sampler.sample_values(rngs)
    columns = []
    for problem, rows in zip(problems, pair_rows):
        inside, boundary, chosen = rows
        h = problem.harmonic_extension(values[:, boundary].T).reshape(problem.n, -1).T
        columns.append((values[:, inside] - h)[:, chosen])
    return list(np.concatenate(columns, axis=1))


def zfield_local_correlations(cfg, n_mc, seed, per_box=8, workers=None):
    """
    Pairwise corr(ψ^z_x, ψ^z'_y) for z ≠ z', with `per_box` spread sites x of each U_z.

    The local fields ψ^z = φ - h_z on U_z are independent for separated boxes.
    """
    if len(cfg.sites) < 2:
        raise InvalidConfigurationError('local correlations need at least two sites')
    problems = [dirichlet_problem(h.U) for h in cfg.hierarchies]
    sampler = PointSetSampler(np.concatenate([np.concatenate([p.points, p.boundary]) for p in problems]))
    pair_rows = []
    for problem in problems:
        chosen = np.unique(np.linspace(0, problem.n - 1, per_box).astype(int))
        pair_rows.append((sampler.rows(problem.points), sampler.rows(problem.boundary), chosen))
    psi = np.asarray(run_batches(functools.partial(_local_fields_batch, sampler, problems, pair_rows),
                                 n_mc, seed, workers))
    offsets = np.cumsum([0] + [len(rows[2]) for rows in pair_rows])
    worst, exceed, pairs = 0.0, 0, 0
    threshold = 4.0 / math.sqrt(n_mc)
    for i in range(len(problems)):
        for j in range(i + 1, len(problems)):
            corr = np.abs(correlation_matrix(psi[:, offsets[i]:offsets[i + 1]],
                                             psi[:, offsets[j]:offsets[j + 1]]))
            worst = max(worst, float(corr.max()))
            exceed += int((corr > threshold).sum())
            pairs += corr.size
    return CrossCorrelation(worst, threshold, family_threshold(pairs, n_mc), pairs,
                            exceed / pairs, n_mc, seed)


@dataclass(frozen=True, eq=False)
class HarmonicTail:
    """P[sup_D |h_B| >= a] over a level grid with a quadratic fit of its logarithm."""

    levels: np.ndarray
    estimates: tuple
    coefficients: np.ndarray
    r_squared: float
    rate: float
    L: int
    K: int

    @property
    def passed(self):
        return self.rate > 0


def _sup_batch(sampler, rngs):
    return list(np.abs(sampler.sample(rngs)[0]).max(axis=1))


def harmonic_sups(L, K, n_mc, seed, d=3, workers=None):
    """Samples of sup_D |h_B| for the box at the origin; equal seeds give paired samples across K."""
    sampler = ZFieldSampler(ZFieldConfig.build([(0,) * d], L, K, d))
    return np.asarray(run_batches(functools.partial(_sup_batch, sampler), n_mc, seed, workers))


def harmonic_sup_tail(L, K, levels, n_mc, seed, d=3, workers=None):
    """
    Tail of sup_D |h_B| on a level grid. log p̂(a) is fitted by a quadratic in a; the
    tail has the Gaussian form exp(-c (KL)^{d-2} a² + ...) when the fitted rate
    c = -coef(a²) / (KL)^{d-2} is positive.
    """
    levels = np.asarray(sorted(float(a) for a in levels))
    if (levels < 0).any():
        raise InvalidArgumentError('tail levels must be nonnegative')
    sups = harmonic_sups(L, K, n_mc, seed, d, workers)
    estimates = tuple(McEstimate.from_samples(sups >= a, seed) for a in levels)
    means = np.array([e.mean for e in estimates])
    usable = (means > 0) & (levels > 0)
    if usable.sum() < 3:
        raise EstimationError(f'only {int(usable.sum())} levels with a positive tail estimate; need 3')
    x, y = levels[usable], np.log(means[usable])
    coefficients = np.polyfit(x, y, 2)
    residual = y - np.polyval(coefficients, x)
    spread = ((y - y.mean()) ** 2).sum()
    r_squared = 1.0 - float((residual ** 2).sum() / spread) if spread > 0 else 1.0
    rate = -float(coefficients[0]) / (K * L) ** (d - 2)
    return HarmonicTail(levels, estimates, coefficients, r_squared, rate, L, K)


# =============================================================================
# COARSE-GRAINING: GOOD AND BAD BOXES
# =============================================================================

def diameter_threshold(L):
    """Smallest integer diameter with diam >= L / 10."""
    return math.ceil(L / 10)


def check_levels(gamma, delta, a=math.inf):
    if not gamma > delta:
        raise InvalidConfigurationError(f'need gamma > delta, got gamma={gamma}, delta={delta}')
    if not a > 0:
        raise InvalidConfigurationError(f'need a > 0, got a={a}')


@dataclass(frozen=True)
class BoxStatus:
    z: tuple
    psi_good: bool
    h_good: bool
    min_h: float

    @property
    def good(self):
        return self.psi_good and self.h_good


def _neighbors(z, L):
    z = np.asarray(z, dtype=np.int64)
    return [tuple(int(v) for v in z + L * step) for step in unit_vectors(len(z))]


class BoxFields:
    """
    h_B and ψ_B on D_B for the L-boxes of one field, computed on demand.

    ψ_B = φ - h_B on U_B and 0 elsewhere; off U_B (possible when K < 4) h_B = φ.
    """

    def __init__(self, field, L, K, connectivity='nearest'):
        self.field = field
        self.L = L
        self.K = K
        self.structure = connectivity_structure(field.d, connectivity)
        self._cache = {}
        self._big = {}

    def hierarchy(self, z):
        return BoxHierarchy(tuple(z), self.L, self.K)

    def get(self, z):
        z = tuple(int(v) for v in z)
        if z not in self._cache:
            h = self.hierarchy(z)
            problem = dirichlet_problem(h.U)
            h_U = problem.harmonic_extension(self.field.at(problem.boundary))
            dpts = h.D.points()
            phi = self.field.at(dpts)
            inside = h.U.contains(dpts)
            h_D = phi.copy()
            h_D[inside] = h_U[Window(h.U).index(dpts[inside])]
            psi_D = np.where(inside, phi - h_D, 0.0)
            self._cache[z] = (h_D.reshape(h.D.shape), psi_D.reshape(h.D.shape))
        return self._cache[z]

    def big_components(self, z, gamma):
        """Labels of B_z ∩ {ψ_B >= γ} and the labels of its components with diameter >= L/10."""
        key = (tuple(int(v) for v in z), gamma)
        if key not in self._big:
            h = self.hierarchy(z)
            psi_B = self.get(z)[1][Window(h.D).slices_for(h.B)]
            labels, count = ndimage.label(psi_B >= gamma, structure=self.structure)
            threshold = diameter_threshold(self.L)
            big = [i + 1 for i, slc in enumerate(ndimage.find_objects(labels))
                   if max(s.stop - s.start for s in slc) - 1 >= threshold]
            self._big[key] = (labels, big)
        return self._big[key]

    def psi_good(self, z, gamma, delta):
        labels_B, big_B = self.big_components(z, gamma)
        if not big_B:
            return False
        h = self.hierarchy(z)
        window_D = Window(h.D)
        linked, _ = ndimage.label(self.get(z)[1] >= delta, structure=self.structure)
        linked_B = linked[window_D.slices_for(h.B)]
        own = [set(np.unique(linked_B[labels_B == c])) - {0} for c in big_B]
        for z2 in _neighbors(z, self.L):
            labels_n, big_n = self.big_components(z2, gamma)
            if not big_n:
                continue
            linked_n = linked[window_D.slices_for(self.hierarchy(z2).B)]
            for c2 in big_n:
                theirs = set(np.unique(linked_n[labels_n == c2])) - {0}
                if any(not (mine & theirs) for mine in own):
                    return False
        return True

    def min_h(self, z):
        return float(self.get(z)[0].min())


def classify_boxes(field, sites, L, K, gamma, delta, a=math.inf, connectivity='nearest'):
    """
    ψ-good / h-good status of the boxes B_z, z in `sites`.

    B is ψ-good when B ∩ {ψ_B >= γ} has a component of diameter >= L/10 and, for every
    neighbor box B', any two such components of B and B' are connected in
    D ∩ {ψ_B >= δ}. B is h-good when inf_D h_B > -a. The field's window must contain
    B~ and D of every box and of its neighbors.
    """
    check_levels(gamma, delta, a)
    fields = field if isinstance(field, BoxFields) else BoxFields(field, L, K, connectivity)
    statuses = []
    for z in as_points(sites, field.d if isinstance(field, Field) else None):
        z = tuple(int(v) for v in z)
        min_h = fields.min_h(z)
        statuses.append(BoxStatus(z, fields.psi_good(z, gamma, delta), min_h > -a, min_h))
    return statuses


def _shift(mask, axis, sign):
    out = np.zeros_like(mask)
    src = [slice(None)] * mask.ndim
    dst = [slice(None)] * mask.ndim
    if sign > 0:
        src[axis], dst[axis] = slice(None, -1), slice(1, None)
    else:
        src[axis], dst[axis] = slice(1, None), slice(None, -1)
    out[tuple(dst)] = mask[tuple(src)]
    return out


def shortest_path(allowed, start, goal):
    """
    Breadth-first shortest nearest-neighbor path inside `allowed` from a site of
    `start` to a site of `goal` (boolean arrays of one shape), as an array of index
    tuples, or None.
    """
    d = allowed.ndim
    steps = unit_vectors(d)
    root = len(steps)
    parent = np.full(allowed.shape, -1, dtype=np.int8)
    frontier = start & allowed
    seen = frontier.copy()
    parent[frontier] = root
    while frontier.any():
        reached = frontier & goal
        if reached.any():
            site = np.argwhere(reached)[0]
            path = [site]
            while parent[tuple(site)] != root:
                site = site - steps[parent[tuple(site)]]
                path.append(site)
            return np.asarray(path[::-1])
        grown = np.zeros_like(frontier)
        for k, step in enumerate(steps):
            axis = int(np.flatnonzero(step)[0])
            fresh = _shift(frontier, axis, int(step[axis])) & allowed & ~seen & ~grown
            parent[fresh] = k
            grown |= fresh
        seen |= grown
        frontier = grown
    return None


def column_crossing_path(field, boxes, L, K, delta, a):
    """
    A path in E^{≥δ-a} ∩ ∪ D^i from B^0 to B^n for a chain of neighboring L-boxes,
    as an array of points, or None.
    """
    hierarchies = [BoxHierarchy(tuple(box.lower) if isinstance(box, BoxSpec) else tuple(box), L, K)
                   for box in boxes]
    lower = np.min([h.D.lower for h in hierarchies], axis=0)
    upper = np.max([h.D.upper for h in hierarchies], axis=0)
    region = BoxSpec(tuple(lower), tuple(upper))
    window = Window(region)
    union = np.zeros(region.shape, dtype=bool)
    for h in hierarchies:
        union[window.slices_for(h.D)] = True
    values = field.values[field.window.slices_for(region)]
    allowed = union & (values >= delta - a)
    start = np.zeros_like(union)
    start[window.slices_for(hierarchies[0].B)] = True
    goal = np.zeros_like(union)
    goal[window.slices_for(hierarchies[-1].B)] = True
    path = shortest_path(allowed, start, goal)
    return None if path is None else path + lower


def census_window(columns, L, K, d=3):
    """Smallest box holding B~ and D of every column box and of its neighbors."""
    lows, highs = [], []
    for column in columns:
        for box in column.boxes:
            for z in [box.lower] + _neighbors(box.lower, L):
                h = BoxHierarchy(tuple(z), L, K)
                for b in (h.B_tilde, h.D):
                    lows.append(b.lower)
                    highs.append(b.upper)
    if not lows:
        raise GeometryError('no columns fit this geometry')
    return Window(BoxSpec(tuple(np.min(lows, axis=0)), tuple(np.max(highs, axis=0))))


def estimate_rho(eta, L):
    """ρ = √(log L / log(1/η)); needs 0 < η < 1."""
    if not 0 < eta < 1:
        raise EstimationError(f'eta = {eta} must lie strictly between 0 and 1 to form rho')
    return math.sqrt(math.log(L) / math.log(1.0 / eta))


@dataclass(frozen=True)
class CensusBound:
    K_bar: int
    rho: float
    rho_tilde: float
    rate: float
    bound: float


def bernoulli_census_bound(N, L, K, d, m, eta):
    """
    Chernoff bound K̄^d exp(-m I(ρ̃ | η)) on the probability that the m boxes of some
    K̄-sublattice hold more than ρ̃ m independent η-bad boxes, K̄ = 2K + 3. The bound is
    1 unless η < ρ̃ < 1.
    """
    rho = estimate_rho(eta, L)
    K_bar = 2 * K + 3
    rho_tilde = rho / K_bar ** d * (N / L) ** (d - 1) / m
    if eta < rho_tilde < 1:
        rate = rho_tilde * math.log(rho_tilde / eta) + (1 - rho_tilde) * math.log((1 - rho_tilde) / (1 - eta))
        bound = min(1.0, K_bar ** d * math.exp(-m * rate))
    else:
        rate, bound = 0.0, 1.0
    return CensusBound(K_bar, rho, rho_tilde, rate, bound)


@dataclass(frozen=True, eq=False)
class CensusReport:
    """Bad-column counts of the sampled fields and the frequency of C_N."""

    columns: int
    boxes: int
    counts: np.ndarray
    mean_count: McEstimate
    eta: McEstimate
    rho: float
    threshold: float
    cn_frequency: McEstimate
    bound: CensusBound
    note: str = ''


def _census_batch(sampler, column_sites, L, K, gamma, delta, connectivity, rngs):
    out = []
    for values in sampler.sample_values(rngs):
        fields = BoxFields(Field(sampler.window, values), L, K, connectivity)
        status = {}
        bad_columns = 0
        for sites in column_sites:
            bad = False
            for z in sites:
                if z not in status:
                    status[z] = fields.psi_good(z, gamma, delta)
                bad = bad or not status[z]
            bad_columns += bad
        out.append(np.array([bad_columns, sum(not good for good in status.values()), len(status)]))
    return out


def bad_column_census(N, M, L, K, gamma, delta, n_mc, seed, d=3, eta=None,
                      guard_factor=2.0, connectivity='nearest', workers=None):
    """
    Number of columns holding a ψ-bad box, per sampled field, with η̂ (the fraction of
    ψ-bad boxes), ρ = √(log L / log(1/η)) and the frequency of C_N = {at least
    ρ (N/L)^{d-1} bad columns}. When η̂ is 0 or 1, ρ and C_N are left undefined and the
    report says so.
    """
    check_levels(gamma, delta)
    columns = enumerate_columns(N, M, L, d)
    window = census_window(columns, L, K, d)
    sampler = FieldSampler(window, 'auto', guard_factor)
    column_sites = [tuple(box.lower for box in column.boxes) for column in columns]
    m = len({z for sites in column_sites for z in sites})
    logger.info('census: %d columns, %d boxes, window %s', len(columns), m, window)
    raw = np.asarray(run_batches(
        functools.partial(_census_batch, sampler, column_sites, L, K, gamma, delta, connectivity),
        n_mc, seed, workers))
    counts = raw[:, 0]
    eta_hat = McEstimate.from_samples(raw[:, 1] / raw[:, 2], seed)
    eta_used = eta_hat.mean if eta is None else eta
    try:
        rho = estimate_rho(eta_used, L)
    except EstimationError as exc:
        logger.warning('census: %s', exc)
        return CensusReport(len(columns), m, counts, McEstimate.from_samples(counts, seed), eta_hat,
                            math.nan, math.nan, None, None, note=str(exc))
    threshold = rho * (N / L) ** (d - 1)
    cn = McEstimate.from_samples(counts >= threshold, seed)
    bound = bernoulli_census_bound(N, L, K, d, m, eta_used)
    return CensusReport(len(columns), m, counts, McEstimate.from_samples(counts, seed), eta_hat,
                        rho, threshold, cn, bound)


@dataclass(frozen=True)
class PathCheck:
    """Columns whose boxes were all ψ-good and h-good, and how many of them had a path across."""

    samples: int
    good_columns: int
    paths_found: int

    @property
    def all_found(self):
        return self.paths_found == self.good_columns


def _path_batch(sampler, column_sites, L, K, gamma, delta, a, rngs):
    out = []
    for values in sampler.sample_values(rngs):
        field = Field(sampler.window, values)
        fields = BoxFields(field, L, K)
        good = found = 0
        for sites in column_sites:
            if all(fields.psi_good(z, gamma, delta) and fields.min_h(z) > -a for z in sites):
                good += 1
                found += column_crossing_path(field, sites, L, K, delta, a) is not None
        out.append(np.array([good, found]))
    return out


def path_building_check(N, M, L, K, gamma, delta, a, n_mc, seed, d=3, guard_factor=2.0, workers=None):
    """
    For every column of every sampled field whose boxes are all ψ-good and h-good,
    look for a nearest-neighbor path in E^{≥δ-a} across the column.
    """
    check_levels(gamma, delta, a)
    columns = enumerate_columns(N, M, L, d)
    window = census_window(columns, L, K, d)
    sampler = FieldSampler(window, 'auto', guard_factor)
    column_sites = [tuple(box.lower for box in column.boxes) for column in columns]
    raw = np.asarray(run_batches(
        functools.partial(_path_batch, sampler, column_sites, L, K, gamma, delta, a), n_mc, seed, workers))
    check = PathCheck(n_mc, int(raw[:, 0].sum()), int(raw[:, 1].sum()))
    if not check.all_found:
        logger.warning('path check: %d of %d good columns without a path',
                       check.good_columns - check.paths_found, check.good_columns)
    return check
