"""
Tests for Experiment Configuration

Tests ExperimentConfigSerializer including:
- Defaults per experiment
- Collection of every violated precondition
- Canonical JSON and config hashes
"""
from django.test import SimpleTestCase

from gffdisc.serializers import (
    EXPERIMENT_DEFAULTS,
    EXPERIMENTS,
    ExperimentConfig,
    ExperimentConfigSerializer,
)


def validated(**data):
    serializer = ExperimentConfigSerializer(data=data)
    serializer.is_valid(raise_exception=True)
    return serializer.save()


def errors_of(**data):
    serializer = ExperimentConfigSerializer(data=data)
    assert not serializer.is_valid()
    return serializer.errors


class DefaultsTests(SimpleTestCase):
    """Test that experiment defaults are filled in."""

    def test_every_experiment_has_defaults(self):
        """Test that the default table covers every experiment."""
        self.assertEqual(set(EXPERIMENT_DEFAULTS), set(EXPERIMENTS))

    def test_cap_defaults(self):
        """Test the cap defaults and the common seed, dimension and sample count."""
        config = validated(experiment='cap')
        self.assertIsInstance(config, ExperimentConfig)
        self.assertEqual(config['boxes'], [1, 2, 3, 4])
        self.assertEqual((config.seed, config['d'], config.n_mc), (0, 3, 1000))
        self.assertIsNone(config.workers)

    def test_given_values_win(self):
        """Test that explicit values replace defaults."""
        config = validated(experiment='disconnect', N=3, alphas=[0.25], seed=7, n_mc=50)
        self.assertEqual(config['N'], 3)
        self.assertEqual(config['alphas'], [0.25])
        self.assertEqual(config['M'], 2.0)
        self.assertEqual((config.seed, config.n_mc), (7, 50))

    def test_every_default_config_is_valid(self):
        """Test that every experiment validates with its defaults alone."""
        for experiment in EXPERIMENTS:
            with self.subTest(experiment=experiment):
                self.assertTrue(ExperimentConfigSerializer(data={'experiment': experiment}).is_valid())


class ValidationTests(SimpleTestCase):
    """Test that invalid configurations are rejected with every error listed."""

    def test_unknown_experiment(self):
        """Test that an unknown experiment name is rejected."""
        self.assertIn('experiment', errors_of(experiment='percolate'))

    def test_field_ranges(self):
        """Test type and range checks of individual fields."""
        errors = errors_of(experiment='cap', d=2, seed=-1, n_mc=0)
        self.assertEqual({'d', 'seed', 'n_mc'}, set(errors))

    def test_all_geometry_errors_collected(self):
        """Test that MN < N+1 and a small guard factor are reported together."""
        errors = errors_of(experiment='disconnect', N=2, M=1.2, guard_factor=1.0)
        self.assertIn('M', errors)
        self.assertIn('guard_factor', errors)

    def test_coarse_grain_levels(self):
        """Test that γ <= δ and a <= 0 are both reported."""
        errors = errors_of(experiment='coarse-grain', gamma=0.0, delta=0.0, a=0.0)
        self.assertIn('gamma', errors)
        self.assertIn('a', errors)

    def test_coarse_grain_without_columns(self):
        """Test that an L too large for any column is rejected."""
        self.assertIn('L', errors_of(experiment='coarse-grain', N=2, L=8))

    def test_zfield_separation_per_k(self):
        """Test that separation is checked for every K of the grid."""
        errors = errors_of(experiment='zfield', L=4, K_list=[2, 3], sites=[[0, 0, 0], [20, 0, 0]])
        self.assertEqual(len(errors['sites']), 1)
        self.assertIn('K=3', str(errors['sites'][0]))

    def test_zfield_sites_on_lattice(self):
        """Test that sites off the coarse lattice are rejected."""
        self.assertIn('sites', errors_of(experiment='zfield', L=4, sites=[[1, 0, 0]]))

    def test_contour_bound_alpha(self):
        """Test that the contour bound needs α < 0."""
        self.assertIn('alpha', errors_of(experiment='contour-bound', alpha=0.0))

    def test_kappa(self):
        """Test the κ range and the (1 + κ) N >= N + 1 condition."""
        self.assertIn('kappa', errors_of(experiment='disconnect', kappa=0.5))
        self.assertIn('kappa', errors_of(experiment='disconnect', N=2, kappa=0.05))
        validated(experiment='disconnect', N=12, M=1.5, kappa=0.09)

    def test_interlacement_levels(self):
        """Test that nonpositive u is rejected."""
        self.assertIn('u_grid', errors_of(experiment='interlace', u_grid=[0.0, 1.0]))
        self.assertIn('u', errors_of(experiment='srw', u=-1.0))

    def test_decompose_window(self):
        """Test that U and its boundary must fit the window."""
        self.assertIn('U_radius', errors_of(experiment='decompose', radius=3, U_radius=3))


class CanonicalFormTests(SimpleTestCase):
    """Test the canonical JSON and the config hash."""

    def test_runtime_keys_excluded(self):
        """Test that output directory and worker count do not change the hash."""
        first = validated(experiment='cap', boxes=[1], out='/tmp/a', workers=1)
        second = validated(experiment='cap', boxes=[1], out='/tmp/b', workers=4)
        self.assertEqual(first.config_hash, second.config_hash)
        self.assertNotIn('workers', first.canonical_json())
        self.assertNotIn('"out"', first.canonical_json())

    def test_seed_changes_hash(self):
        """Test that the seed is part of the hash."""
        self.assertNotEqual(validated(experiment='cap', seed=1).config_hash,
                            validated(experiment='cap', seed=2).config_hash)

    def test_canonical_json_sorted(self):
        """Test sorted compact keys."""
        text = validated(experiment='green').canonical_json()
        self.assertTrue(text.startswith('{"d":3,"displacements":'))
        self.assertNotIn(' ', text)

    def test_round_trip(self):
        """Test that validating the serialized params gives the same configuration."""
        config = validated(experiment='zfield', L=2, K_list=[2], sites=[[0, 0, 0], [10, 0, 0]])
        again = validated(**config.params)
        self.assertEqual(again.params, config.params)
        self.assertEqual(again.config_hash, config.config_hash)
