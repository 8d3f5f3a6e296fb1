"""
Experiment Service

Runs validated experiment configurations and writes their reports.

Every experiment maps onto library operations; its runner returns one dict per grid
point. The service owns the worker pool size, records the run in the registry and
hands the rows to ReportExporter.
"""

import logging
import math
import time
import traceback
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from django.conf import settings
from django.db import DatabaseError

from ..exceptions import InvalidArgumentError
from ..export_utils import ReportExporter
from ..gff import (
    FieldSampler,
    decompose,
    decomposition_cross_correlation,
    harmonicity_residual,
    rate_function,
    variance_identity,
)
from ..interlace import (
    coupling_order_check,
    occupation_frequency,
    origin_hitting_probability,
    poisson_goodness_of_fit,
    srw_disconnection_prob,
    truncation_bias,
    vacant_disconnection_curve,
    walk_counts,
)
from ..lattice import BoxSpec, Window, sphere_radius
from ..montecarlo import task_rng
from ..percolation import (
    ZFieldConfig,
    bad_column_census,
    contour_bound_check,
    crossing_curve,
    disconnection_curve,
    harmonic_sup_tail,
    path_building_check,
    tilted_disconnection,
    zfield_statistics,
    zfield_variance,
)
from ..potential import (
    box_capacity,
    brownian_capacity_cube,
    capacity_routes,
    far_field_constant,
    free_green,
)

logger = logging.getLogger(__name__)

GFF_VARIANTS = ('gff-lower', 'gff-upper', 'gff-contour', 'gff-high-dimension')
INTERLACEMENT_VARIANTS = ('interlacement', 'interlacement-lower')


@dataclass(frozen=True)
class ExperimentResult:
    config: object
    rows: list
    paths: list
    run_id: int = None


class ExperimentService:
    """
    Central service for running gffdisc experiments.
    """

    RUNNERS = {
        'green': 'run_green',
        'cap': 'run_cap',
        'sample': 'run_sample',
        'decompose': 'run_decompose',
        'disconnect': 'run_disconnect',
        'contour-bound': 'run_contour_bound',
        'tilt-lowerbound': 'run_tilt_lowerbound',
        'zfield': 'run_zfield',
        'coarse-grain': 'run_coarse_grain',
        'interlace': 'run_interlace',
        'srw': 'run_srw',
        'rates': 'run_rates',
        'crossing': 'run_crossing',
        'harmonic-tail': 'run_harmonic_tail',
    }

    @classmethod
    def run(cls, config, out_dir=None):
        """Run one experiment and write its report; nothing is written on failure."""
        out_dir = Path(out_dir or config.get('out') or settings.GFFDISC_OUTPUT_DIR)
        logger.info('experiment %s: config %s, seed %s', config.experiment, config.config_hash[:8], config.seed)
        record = cls._record_start(config)
        started = time.perf_counter()
        try:
            result = getattr(cls, cls.RUNNERS[config.experiment])(config)
            rows, extra = result if isinstance(result, tuple) else (result, {})
            exporter = ReportExporter(rows, config, time.perf_counter() - started, extra)
            paths = exporter.write(out_dir)
        except Exception as exc:
            logger.error('experiment %s failed: %s\n%s', config.experiment, exc, traceback.format_exc())
            cls._record_failure(record, exc)
            raise
        cls._record_success(record, paths, len(rows))
        return ExperimentResult(config, rows, paths, getattr(record, 'pk', None))

    # =========================================================================
    # RUN REGISTRY
    # =========================================================================

    @classmethod
    def _record_start(cls, config):
        from ..models import ExperimentRun

        try:
            return ExperimentRun.objects.create(
                experiment=config.experiment,
                config=config.params,
                config_hash=config.config_hash,
                seed=config.seed,
            )
        except DatabaseError as exc:
            logger.warning('run registry unavailable (%s); continuing without a record', exc)
            return None

    @classmethod
    def _record_success(cls, record, paths, row_count):
        if record is None:
            return
        try:
            record.mark_completed(paths, row_count)
        except DatabaseError as exc:
            logger.warning('could not record completion: %s', exc)

    @classmethod
    def _record_failure(cls, record, exc):
        if record is None:
            return
        try:
            record.mark_failed(f'{type(exc).__name__}: {exc}')
        except DatabaseError as db_exc:
            logger.warning('could not record failure: %s', db_exc)

    # =========================================================================
    # POTENTIAL THEORY
    # =========================================================================

    @classmethod
    def run_green(cls, config):
        d = config['d']
        rows = []
        for x in config['displacements']:
            value, far_field = free_green(x, d, return_flag=True)
            norm = math.sqrt(sum(v * v for v in x))
            asymptotic = far_field_constant(d) * norm ** (2 - d) if norm else None
            rows.append({
                'x': list(x),
                'g': value,
                'asymptotic': asymptotic,
                'ratio': value / asymptotic if asymptotic else None,
                'far_field': far_field,
            })
        return rows

    @classmethod
    def run_cap(cls, config):
        d = config['d']
        rows = []
        for N in config['boxes']:
            value = box_capacity(N, d)
            row = {'quantity': 'box', 'N': N, 'capacity': value,
                   'capacity_over_scale': value / N ** (d - 2) if N else None}
            if config['routes']:
                routes = capacity_routes(BoxSpec.ball(N, d), tuple(config['radii']))
                row.update(dirichlet=routes.dirichlet, variational=routes.variational, spread=routes.spread)
            if config['variance_check']:
                check = variance_identity(N, d, config.n_mc, config.seed, config.workers)
                row.update(symbolic_variance=check.symbolic, reciprocal_capacity=check.reciprocal_capacity,
                           sample_variance=check.sample_variance, sample_variance_stderr=check.sample_variance_stderr,
                           n=check.n, seed=check.seed)
            rows.append(row)
        if config['cube_radii']:
            cube = brownian_capacity_cube(d, tuple(config['cube_radii']))
            rows.append({'quantity': 'cube', 'capacity': cube.value, 'error': cube.error,
                         'pre_asymptotic': cube.pre_asymptotic})
        return rows

    # =========================================================================
    # GAUSSIAN FREE FIELD
    # =========================================================================

    @classmethod
    def run_sample(cls, config):
        window = Window.ball(config['radius'], config['d'])
        sampler = FieldSampler(window, config['method'], config['guard_factor'])
        field = sampler.sample(task_rng(config.seed, 0))
        field.seed = config.seed
        values = field.values
        row = {'radius': config['radius'], 'method': sampler.method, 'sites': window.size,
               'mean': float(values.mean()), 'variance': float(values.var()),
               'min': float(values.min()), 'max': float(values.max()), 'bias_bound': sampler.bias}
        return [row], {'.field.txt': field.to_text()}

    @classmethod
    def run_decompose(cls, config):
        d = config['d']
        window = Window.ball(config['radius'], d)
        U = BoxSpec.ball(config['U_radius'], d)
        phi = FieldSampler(window).sample(task_rng(config.seed, 0))
        parts = decompose(phi, U)
        exactness = float(np.abs(parts.h.values + parts.psi.values - phi.values).max())
        residual = harmonicity_residual(parts.h, parts.U)
        cross = decomposition_cross_correlation(config['radius'], config['U_radius'], config.n_mc,
                                                config.seed, d, workers=config.workers)
        return [{
            'radius': config['radius'], 'U_radius': config['U_radius'],
            'exactness': exactness, 'harmonicity_residual': residual,
            'max_abs_corr': cross.max_abs, 'threshold': cross.threshold,
            'family_threshold': cross.family_threshold, 'pairs': cross.pairs,
            'exceed_fraction': cross.exceed_fraction, 'n': cross.n, 'seed': cross.seed,
        }]

    @classmethod
    def run_tilt_lowerbound(cls, config):
        report = tilted_disconnection(config['alpha'], config['N'], config['M'], config['plateau'],
                                      config.n_mc, config.seed, config['d'], eta=config['eta'],
                                      workers=config.workers)
        row = {'N': config['N'], 'M': config['M'], 'alpha': report.alpha, 'plateau': report.plateau,
               'entropy': report.entropy}
        row.update(report.tilted.as_row('tilted_'))
        row.update(report.direct.as_row('direct_'))
        row.update(lower_bound=report.lower_bound, direct_log_upper=report.direct_log_upper,
                   consistent=report.consistent)
        return [row]

    @classmethod
    def run_rates(cls, config):
        d = config['d']
        cap = config.get('cap_cube')
        if cap is None:
            cap = brownian_capacity_cube(d).value
        common = dict(d=d, cap_cube=cap, h=config['h'])
        rows = []
        for variant in config['variants']:
            if variant in GFF_VARIANTS:
                for alpha in config['alphas']:
                    value = rate_function(variant, alpha=alpha, epsilon=config['epsilon'], eta=config['eta'],
                                          **common)
                    rows.append({'variant': variant, 'alpha': alpha, 'u': None, 'rate': value})
            elif variant in INTERLACEMENT_VARIANTS:
                for u in config['u_grid']:
                    rows.append({'variant': variant, 'alpha': None, 'u': u,
                                 'rate': rate_function(variant, u=u, **common)})
            else:
                rows.append({'variant': variant, 'alpha': None, 'u': None,
                             'rate': rate_function(variant, **common)})
        for row in rows:
            row['cap_cube'] = cap
        return rows

    # =========================================================================
    # LEVEL-SET PERCOLATION
    # =========================================================================

    @classmethod
    def _sphere_sampler(cls, config):
        window = Window.ball(sphere_radius(config['N'], config['M']), config['d'])
        return FieldSampler(window, config.get('method', 'auto'), config.get('guard_factor', 4.0))

    @classmethod
    def run_disconnect(cls, config):
        sampler = cls._sphere_sampler(config)
        estimates = disconnection_curve(config['alphas'], config['N'], config['M'], config.n_mc,
                                        config.seed, config['d'], sampler, config.get('kappa'),
                                        config.workers)
        rows = []
        for alpha, estimate in zip(config['alphas'], estimates):
            row = {'N': config['N'], 'M': config['M'], 'alpha': alpha}
            row.update(estimate.as_row())
            row['bias_bound'] = sampler.bias
            rows.append(row)
        return rows

    @classmethod
    def run_contour_bound(cls, config):
        report = contour_bound_check(config['alpha'], config['N'], config['M'], config.n_mc, config.seed,
                                     config['d'], config['confidence'], workers=config.workers)
        row = {'N': report.N, 'M': report.M, 'alpha': report.alpha}
        row.update(report.estimate.as_row())
        row.update(upper=report.upper, confidence=report.confidence, capacity=report.capacity,
                   bound=report.bound, passed=report.passed, bias_bound=report.sampler_bias)
        return [row]

    @classmethod
    def run_crossing(cls, config):
        estimates = crossing_curve(config['alphas'], config['L'], config.n_mc, config.seed, config['d'],
                                   workers=config.workers)
        rows = []
        for alpha, estimate in zip(config['alphas'], estimates):
            row = {'L': config['L'], 'alpha': alpha}
            row.update(estimate.as_row())
            rows.append(row)
        return rows

    @classmethod
    def run_zfield(cls, config):
        d, L = config['d'], config['L']
        rows = []
        for K in config['K_list']:
            cfg = ZFieldConfig.build(config['sites'], L, K, d)
            exact = zfield_variance(cfg)
            row = {'L': L, 'K': K, 'sites': len(cfg.sites), 'cap_C': cfg.capacity,
                   'variance': exact, 'variance_times_cap': exact * cfg.capacity,
                   'weights_bounded': cfg.weights_bounded, 'asymptotic_regime': cfg.asymptotic_regime}
            variance, inf_stats = zfield_statistics(cfg, config.n_mc, config.seed, workers=config.workers)
            row.update(sample_variance=variance.sample_variance, sample_variance_stderr=variance.stderr,
                       z_score=variance.z_score)
            row.update(inf_stats.estimate.as_row('inf_'))
            row.update(ratio=inf_stats.ratio, ratio_stderr=inf_stats.ratio_stderr)
            rows.append(row)
        scaled = [row['variance_times_cap'] for row in rows]
        decreasing = all(b < a for a, b in zip(scaled, scaled[1:]))
        logger.info('zfield: var(Z_f) cap(C) over K=%s is %sdecreasing', config['K_list'],
                    '' if decreasing else 'not ')
        for row in rows:
            row['trend_decreasing'] = decreasing
        return rows

    @classmethod
    def run_harmonic_tail(cls, config):
        rows = []
        for K in config['K_list']:
            tail = harmonic_sup_tail(config['L'], K, config['levels'], config.n_mc, config.seed,
                                     config['d'], config.workers)
            for level, estimate in zip(tail.levels, tail.estimates):
                row = {'L': config['L'], 'K': K, 'level': float(level)}
                row.update(estimate.as_row())
                row.update(rate=tail.rate, r_squared=tail.r_squared, passed=tail.passed)
                rows.append(row)
        return rows

    @classmethod
    def run_coarse_grain(cls, config):
        args = (config['N'], config['M'], config['L'], config['K'], config['gamma'], config['delta'])
        census = bad_column_census(*args, config.n_mc, config.seed, config['d'],
                                   guard_factor=config['guard_factor'],
                                   connectivity=config['connectivity'], workers=config.workers)
        paths = path_building_check(*args, config['a'], config.n_mc, config.seed, config['d'],
                                    config['guard_factor'], config.workers)
        row = {'N': config['N'], 'M': config['M'], 'L': config['L'], 'K': config['K'],
               'gamma': config['gamma'], 'delta': config['delta'], 'a': config['a'],
               'columns': census.columns, 'boxes': census.boxes,
               'max_count': int(census.counts.max())}
        row.update(census.mean_count.as_row('count_'))
        row.update(census.eta.as_row('eta_'))
        row.update(rho=census.rho, threshold=census.threshold)
        if census.cn_frequency is not None:
            row.update(census.cn_frequency.as_row('cn_'))
        if census.bound is not None:
            row.update(K_bar=census.bound.K_bar, rho_tilde=census.bound.rho_tilde,
                       bernoulli_rate=census.bound.rate, bernoulli_bound=census.bound.bound)
        row.update(note=census.note, good_columns=paths.good_columns, paths_found=paths.paths_found)
        return [row]

    # =========================================================================
    # INTERLACEMENTS AND RANDOM WALK
    # =========================================================================

    @classmethod
    def run_interlace(cls, config):
        d = config['d']
        N, M, guard_factor = config['N'], config['M'], config['guard_factor']
        estimates = vacant_disconnection_curve(config['u_grid'], N, M, guard_factor, config.n_mc,
                                               config.seed, d, config.workers)
        bias = truncation_bias(Window.ball(sphere_radius(N, M), d), guard_factor)
        origin = np.zeros((1, d), dtype=np.int64)
        rows = []
        for u, estimate in zip(config['u_grid'], estimates):
            row = {'N': N, 'M': M, 'u': u}
            row.update(estimate.as_row())
            row['bias_bound'] = bias
            if config['origin_check']:
                occupied = occupation_frequency(u, origin, origin, Window.ball(0, d), guard_factor,
                                                config.n_mc, config.seed, config.workers)[0]
                counts = walk_counts(u, origin, config.n_mc, config.seed, config.workers)
                expected = u / float(free_green(origin, d))
                try:
                    p_value = poisson_goodness_of_fit(counts, expected).p_value
                except InvalidArgumentError as exc:
                    logger.warning('u=%g: no goodness-of-fit test (%s)', u, exc)
                    p_value = None
                row.update(origin_occupied=occupied.mean, origin_occupied_stderr=occupied.stderr,
                           origin_expected=origin_hitting_probability(u, d), walk_count_p_value=p_value)
            rows.append(row)
        return rows

    @classmethod
    def run_srw(cls, config):
        d, N, M = config['d'], config['N'], config['M']
        rows = []
        for guard_factor in config['guard_factors']:
            estimate = srw_disconnection_prob(N, M, guard_factor, config.n_mc, config.seed, d, config.workers)
            row = {'N': N, 'M': M, 'guard_factor': guard_factor}
            row.update(estimate.as_row())
            rows.append(row)
        if config.get('u') is not None:
            check = coupling_order_check(config['u'], N, M, config.n_mc, config.seed, d,
                                         max(config['guard_factors']), config.workers)
            for row in rows:
                row.update(u=check.u, vacant_mean=check.vacant.mean, gff_alpha=check.alpha,
                           gff_mean=check.gff.mean, factor=check.factor,
                           gff_order_holds=check.gff_order_holds, srw_order_holds=check.srw_order_holds)
        return rows
