"""
Monte Carlo plumbing: estimates, seed splitting and the chunked worker pool.

Sample i of a run always draws from task_rng(master_seed, i), and the samples are
grouped in chunks of a fixed size (GFFDISC_MC_CHUNK) whatever the number of workers,
so results are bit-identical for any worker count.
"""

import functools
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np
from django.conf import settings

from .exceptions import InvalidArgumentError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class McEstimate:
    """Mean with standard error sd/√n; stderr is nan for a single sample."""

    mean: float
    stderr: float
    n: int
    seed: int
    wall_time: float = 0.0

    def __post_init__(self):
        if self.n < 1:
            raise InvalidArgumentError(f'McEstimate needs n >= 1, got {self.n}')

    @classmethod
    def from_samples(cls, values, seed, wall_time=0.0):
        values = np.asarray(values, dtype=float)
        n = len(values)
        if n < 1:
            raise InvalidArgumentError('no samples')
        stderr = float(values.std(ddof=1) / math.sqrt(n)) if n > 1 else math.nan
        return cls(float(values.mean()), stderr, n, int(seed), float(wall_time))

    def interval(self, z=4.0):
        return self.mean - z * self.stderr, self.mean + z * self.stderr

    def as_row(self, prefix=''):
        """Report columns; wall time is left out so reruns give identical rows."""
        row = asdict(self)
        row.pop('wall_time')
        return {f'{prefix}{key}': value for key, value in row.items()}


def task_rng(master_seed, index):
    """Independent counter-based stream for task `index` of a run."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(master_seed), int(index)])))


def joint_stderr(a, b):
    """Standard error of the difference of two paired sample means."""
    diff = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    return float(diff.std(ddof=1) / math.sqrt(len(diff))) if len(diff) > 1 else math.nan


def _apply_each(sample_fn, rngs):
    return [sample_fn(rng) for rng in rngs]


def _run_chunk(batch_fn, master_seed, start, stop):
    return batch_fn([task_rng(master_seed, i) for i in range(start, stop)])


def _init_worker():
    os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'gffdisc_project.settings')
    import django

    django.setup()


def run_batches(batch_fn, n, master_seed, workers=None, chunk=None):
    """
    Run `batch_fn` over chunks of per-sample generators and concatenate the results.

    `batch_fn(rngs)` returns one result per generator, in order. It must be picklable
    (a module-level function or a functools.partial of one) when workers > 1.
    """
    if n < 1:
        raise InvalidArgumentError(f'n_mc must be positive, got {n}')
    workers = settings.GFFDISC_WORKERS if workers is None else workers
    chunk = settings.GFFDISC_MC_CHUNK if chunk is None else chunk
    bounds = [(start, min(start + chunk, n)) for start in range(0, n, chunk)]
    if workers <= 1 or len(bounds) == 1:
        parts = [_run_chunk(batch_fn, master_seed, lo, hi) for lo, hi in bounds]
    else:
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker) as executor:
            futures = [executor.submit(_run_chunk, batch_fn, master_seed, lo, hi) for lo, hi in bounds]
            parts = [future.result() for future in futures]
    results = [item for part in parts for item in part]
    logger.debug('ran %d samples in %d chunks on %d workers', n, len(bounds), max(workers, 1))
    return results


def monte_carlo(sample_fn, n, master_seed, workers=None, chunk=None):
    """Results of `sample_fn(rng)` for samples 0..n-1, as an array."""
    return np.asarray(run_batches(functools.partial(_apply_each, sample_fn), n, master_seed, workers, chunk))


def estimate(sample_fn, n, master_seed, workers=None, chunk=None):
    """McEstimate of the mean of a scalar sample function."""
    started = time.perf_counter()
    values = monte_carlo(sample_fn, n, master_seed, workers, chunk)
    return McEstimate.from_samples(values, master_seed, time.perf_counter() - started)
