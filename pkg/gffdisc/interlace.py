"""
Random interlacements and random walk traces on Z^d.

The trace of the interlacement at level u seen from a finite anchor set K is the union
of Poisson(u cap(K)) independent walks started from the normalized equilibrium measure
ē_K. Walks run until they leave a guard box, so a walk that would come back into the
window after leaving the guard is missed; `truncation_bias` bounds the probability of
such a return.
"""

import functools
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .exceptions import GeometryError, InvalidArgumentError
from .gff import guard_box
from .lattice import Window, as_points, sphere_radius, unique_points
from .montecarlo import McEstimate, monte_carlo, run_batches
from .percolation import disconnected, disconnection_prob
from .potential import equilibrium, free_green
from .walks import GeneratorSteps, StreamSteps, visited_sites

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class TraceSample:
    """Sites of a window visited by the walks of one interlacement draw."""

    u: float
    anchor: np.ndarray
    window: Window
    occupied: np.ndarray
    walks: int
    bias: float

    @property
    def vacant(self):
        return VacantMask(self.window, ~self.occupied, self.u)


@dataclass(frozen=True, eq=False)
class VacantMask:
    window: Window
    mask: np.ndarray
    u: float


@functools.lru_cache(maxsize=16)
def _anchor_measure(points):
    eq = equilibrium(np.asarray(points, dtype=np.int64))
    return eq.support, eq.support_weights / eq.capacity, eq.capacity


def anchor_measure(K):
    """(support, ē_K on it, cap(K)) for a finite anchor set."""
    return _anchor_measure(tuple(map(tuple, unique_points(K))))


@functools.lru_cache(maxsize=16)
def _truncation_bias(box, guard_factor):
    guard = guard_box(Window(box), guard_factor)
    return float(equilibrium(box).hitting_probability(guard.outer_boundary()).max())


def truncation_bias(window, guard_factor):
    """sup over the exterior boundary of the guard box of P_x[H_window < ∞]."""
    return _truncation_bias(window.box, float(guard_factor))


def _check_trace_args(u, guard_factor):
    if u <= 0:
        raise InvalidArgumentError(f'interlacement level u must be positive, got {u}')
    if guard_factor < 2:
        raise InvalidArgumentError(f'guard_factor must be >= 2, got {guard_factor}')


def _trace_walks(measure, u, window, guard, rng):
    """Per-walk visited sites of one draw, and each walk's uniform thinning mark."""
    support, probs, cap = measure
    n = int(rng.poisson(u * cap))
    starts = support[rng.choice(len(support), size=n, p=probs)] if n else support[:0]
    marks = rng.random(n)
    streams = rng.spawn(n) if n else []
    visited = visited_sites(starts, window, guard, StreamSteps(streams, window.d))
    return visited, marks


def sample_interlacement_trace(u, K, window, guard_factor, rng):
    """
    One draw of the interlacement trace at level u seen through `window`.

    The walk count is Poisson(u cap(K)); walks start from ē_K and stop when they leave
    the guard box of `window`.
    """
    _check_trace_args(u, guard_factor)
    anchor = unique_points(K, window.d)
    if not window.contains(anchor).all():
        raise GeometryError(f'anchor set is not inside {window!r}')
    guard = guard_box(window, guard_factor)
    visited, _ = _trace_walks(anchor_measure(anchor), u, window, guard, rng)
    occupied = visited.any(axis=0).reshape(window.shape)
    return TraceSample(u, anchor, window, occupied, len(visited), truncation_bias(window, guard_factor))


def _walk_count(measure, u, rng):
    return int(rng.poisson(u * measure[2]))


def walk_counts(u, K, n_mc, seed, workers=None):
    """Walk counts of n_mc independent draws; they are Poisson(u cap(K))."""
    if u <= 0:
        raise InvalidArgumentError(f'interlacement level u must be positive, got {u}')
    measure = anchor_measure(K)
    return monte_carlo(functools.partial(_walk_count, measure, u), n_mc, seed, workers).astype(np.int64)


@dataclass(frozen=True)
class PoissonFit:
    mean: float
    expected: float
    variance: float
    statistic: float
    p_value: float
    bins: int


def poisson_goodness_of_fit(counts, mean):
    """
    Chi-square test of counts against Poisson(mean); neighboring tail values are pooled
    until every bin expects at least five counts.
    """
    counts = np.asarray(counts, dtype=np.int64)
    n = len(counts)
    top = int(max(counts.max(), stats.poisson.ppf(1 - 1e-9, mean))) + 1
    expected = stats.poisson.pmf(np.arange(top), mean) * n
    expected[-1] += stats.poisson.sf(top - 1, mean) * n
    observed = np.bincount(counts, minlength=top)[:top].astype(float)
    edges = [0]
    total = 0.0
    for k in range(top):
        total += expected[k]
        if total >= 5:
            edges.append(k + 1)
            total = 0.0
    if edges[-1] != top:
        if len(edges) > 1:
            edges[-1] = top
        else:
            edges.append(top)
    if len(edges) < 3:
        raise InvalidArgumentError(f'Poisson({mean:g}) gives fewer than two usable bins for n={n}')
    pooled_obs = np.add.reduceat(observed, edges[:-1])
    pooled_exp = np.add.reduceat(expected, edges[:-1])
    pooled_exp *= pooled_obs.sum() / pooled_exp.sum()
    result = stats.chisquare(pooled_obs, pooled_exp, ddof=1)
    return PoissonFit(float(counts.mean()), float(mean), float(counts.var(ddof=1)),
                      float(result.statistic), float(result.pvalue), len(pooled_obs))


def _occupation_batch(measure, u, window, guard, rows, rngs):
    out = []
    for rng in rngs:
        visited, _ = _trace_walks(measure, u, window, guard, rng)
        out.append(visited[:, rows].any(axis=0).astype(float))
    return out


def occupation_frequency(u, points, K, window, guard_factor, n_mc, seed, workers=None):
    """Frequency of x ∈ I^u for each given point x of the window."""
    _check_trace_args(u, guard_factor)
    rows = window.index(as_points(points, window.d))
    hits = np.asarray(run_batches(
        functools.partial(_occupation_batch, anchor_measure(K), u, window,
                          guard_box(window, guard_factor), rows),
        n_mc, seed, workers))
    return [McEstimate.from_samples(hits[:, i], seed) for i in range(len(rows))]


def _vacant_batch(measure, window, guard, u_grid, N, R, rngs):
    u_max = max(u_grid)
    out = []
    for rng in rngs:
        visited, marks = _trace_walks(measure, u_max, window, guard, rng)
        row = []
        for u in u_grid:
            occupied = visited[marks <= u / u_max].any(axis=0).reshape(window.shape)
            row.append(disconnected(~occupied, N, R))
        out.append(np.asarray(row, dtype=float))
    return out


def vacant_disconnection_curve(u_grid, N, M, guard_factor, n_mc, seed, d=3, workers=None):
    """
    P[∂B_N not connected to S_N in V^u] over a u-grid.

    Each draw is made at the largest level and thinned: a walk is kept at level u when
    its uniform mark is at most u / u_max. The occupied sets are nested in u, so the
    estimates are nondecreasing in u draw by draw. The anchor is B_{[MN]} itself, so
    every trajectory meeting the window is represented.
    """
    u_grid = [float(u) for u in u_grid]
    for u in u_grid:
        _check_trace_args(u, guard_factor)
    R = sphere_radius(N, M)
    window = Window.ball(R, d)
    measure = anchor_measure(window.box)
    guard = guard_box(window, guard_factor)
    hits = np.asarray(run_batches(
        functools.partial(_vacant_batch, measure, window, guard, u_grid, N, R), n_mc, seed, workers))
    logger.info('vacant disconnection: truncation bias <= %.3g', truncation_bias(window, guard_factor))
    return [McEstimate.from_samples(hits[:, i], seed) for i in range(len(u_grid))]


def vacant_disconnection_prob(u, N, M, guard_factor, n_mc, seed, d=3, workers=None):
    return vacant_disconnection_curve([u], N, M, guard_factor, n_mc, seed, d, workers)[0]


def _srw_batch(window, guard, N, R, rngs):
    out = []
    origin = np.zeros((1, window.d), dtype=np.int64)
    for rng in rngs:
        visited = visited_sites(origin, window, guard, GeneratorSteps(rng, window.d))[0]
        out.append(float(disconnected(~visited.reshape(window.shape), N, R)))
    return out


def srw_disconnection_prob(N, M, guard_factor, n_mc, seed, d=3, workers=None):
    """
    P_0[∂B_N not connected to S_N in the complement of the walk range], the walk run
    from the origin until it leaves the guard box of B_{[MN]}.

    The walk of sample i only depends on its own stream, so estimates for different
    guard factors with one seed are paired and the range grows with the guard.
    """
    if guard_factor < 2:
        raise InvalidArgumentError(f'guard_factor must be >= 2, got {guard_factor}')
    R = sphere_radius(N, M)
    window = Window.ball(R, d)
    guard = guard_box(window, guard_factor)
    hits = run_batches(functools.partial(_srw_batch, window, guard, N, R), n_mc, seed, workers)
    return McEstimate.from_samples(hits, seed)


@dataclass(frozen=True)
class CouplingReport:
    """
    The orderings P[vacant] <= P[GFF at √(2u)] and
    P[SRW] <= (1 - e^{-u/g(0)})^{-1} P[vacant], each with the allowed 4σ slack.
    """

    u: float
    alpha: float
    vacant: McEstimate
    gff: McEstimate
    srw: McEstimate
    factor: float
    gff_slack: float
    srw_slack: float

    @property
    def gff_order_holds(self):
        return self.vacant.mean <= self.gff.mean + self.gff_slack

    @property
    def srw_order_holds(self):
        return self.srw.mean <= self.factor * self.vacant.mean + self.srw_slack


def _se(estimate):
    return 0.0 if math.isnan(estimate.stderr) else estimate.stderr


def coupling_order_check(u, N, M, n_mc, seed, d=3, guard_factor=4.0, workers=None):
    """The two orderings of disconnection probabilities implied by the couplings, estimated on one seed."""
    _check_trace_args(u, guard_factor)
    alpha = math.sqrt(2 * u)
    vacant = vacant_disconnection_prob(u, N, M, guard_factor, n_mc, seed, d, workers)
    gff = disconnection_prob(alpha, N, M, n_mc, seed, d, workers=workers)
    srw = srw_disconnection_prob(N, M, guard_factor, n_mc, seed, d, workers)
    factor = 1.0 / (1.0 - math.exp(-u / float(free_green(np.zeros(d, dtype=np.int64), d))))
    gff_slack = 4.0 * math.hypot(_se(vacant), _se(gff))
    srw_slack = 4.0 * math.hypot(_se(srw), factor * _se(vacant))
    return CouplingReport(u, alpha, vacant, gff, srw, factor, gff_slack, srw_slack)


def origin_hitting_probability(u, d=3):
    """P[0 ∈ I^u] = 1 - exp(-u / g(0))."""
    return 1.0 - math.exp(-u / float(free_green(np.zeros(d, dtype=np.int64), d)))

