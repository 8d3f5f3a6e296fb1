"""
Vectorized simple random walks on Z^d.

All walks of a batch move in lockstep; a walk stops when it leaves its guard box
(or, for hitting runs, when it lands in a target set). Step directions come from a
step source:

- GeneratorSteps draws from one shared Generator (cheap, no per-walk isolation);
- StreamSteps gives every walk its own Generator, so a walk's path depends only on
  its own stream. This is what makes guard-size and thinning comparisons coupled.
"""

import logging

import numpy as np

from .lattice import PointIndex, as_points, unit_vectors

logger = logging.getLogger(__name__)


class GeneratorSteps:
    """Directions drawn from a single Generator."""

    def __init__(self, rng, d):
        self.rng = rng
        self.n_dirs = 2 * d

    def draw(self, walkers):
        return self.rng.integers(0, self.n_dirs, size=len(walkers))


class StreamSteps:
    """
    Directions drawn from one Generator per walk, buffered in blocks.

    Walk w consumes its stream in order, whatever the other walks do.
    """

    def __init__(self, generators, d, block=256):
        self.generators = list(generators)
        self.n_dirs = 2 * d
        self.block = block
        self._buffer = np.zeros((len(self.generators), block), dtype=np.int64)
        self._cursor = np.full(len(self.generators), block, dtype=np.int64)

    def draw(self, walkers):
        walkers = np.asarray(walkers)
        for w in walkers[self._cursor[walkers] >= self.block]:
            self._buffer[w] = self.generators[w].integers(0, self.n_dirs, size=self.block)
            self._cursor[w] = 0
        moves = self._buffer[walkers, self._cursor[walkers]]
        self._cursor[walkers] += 1
        return moves


def hit_or_escape(starts, target, guard, steps):
    """
    Run walks until they hit `target` (time 0 included) or leave `guard`.

    Args:
        starts: (n, d) start points
        target: PointIndex of the target set
        guard: BoxSpec; a walk outside it is declared escaped
        steps: step source

    Returns:
        Row index into `target.points` of the hitting point, -1 for escaped walks.
    """
    pos = as_points(starts).copy()
    d = pos.shape[1]
    moves = unit_vectors(d)
    landing = target.lookup(pos)
    active = (landing < 0) & guard.contains(pos)
    n_steps = 0
    while active.any():
        walkers = np.flatnonzero(active)
        pos[walkers] += moves[steps.draw(walkers)]
        hit = target.lookup(pos[walkers])
        landed = hit >= 0
        landing[walkers[landed]] = hit[landed]
        escaped = ~guard.contains(pos[walkers])
        active[walkers[landed | escaped]] = False
        n_steps += 1
    logger.debug('hit_or_escape: %d walks finished after %d steps', len(pos), n_steps)
    return landing


def visited_sites(starts, window, guard, steps):
    """
    Ranges of walks run until they leave `guard`, restricted to `window`.

    Returns a boolean array (n_walks, window.size): entry [w, i] is True when walk w
    visited site i of the window.
    """
    pos = as_points(starts).copy()
    d = pos.shape[1]
    moves = unit_vectors(d)
    visited = np.zeros((len(pos), window.size), dtype=bool)

    def mark(walkers):
        inside = window.contains(pos[walkers])
        if inside.any():
            visited[walkers[inside], window.index(pos[walkers[inside]])] = True

    walkers = np.arange(len(pos))
    mark(walkers)
    active = guard.contains(pos)
    while active.any():
        walkers = np.flatnonzero(active)
        pos[walkers] += moves[steps.draw(walkers)]
        mark(walkers)
        active[walkers[~guard.contains(pos[walkers])]] = False
    return visited
