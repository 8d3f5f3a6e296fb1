"""
Experiment configuration: validation and canonical serialization.

An experiment config is a flat JSON object. ExperimentConfigSerializer checks field
types and ranges, fills the experiment's defaults, and collects every violated
geometric precondition into one error map before anything is sampled. The validated
data serializes back to the same JSON tree.
"""

import hashlib
import json
import math
from dataclasses import dataclass, field

from rest_framework import serializers

from .exceptions import GeometryError
from .gff import RATE_VARIANTS, FieldSampler
from .lattice import BoxHierarchy, enumerate_columns, separated, sphere_radius
from .percolation import CONNECTIVITIES

EXPERIMENTS = (
    'green',
    'cap',
    'sample',
    'decompose',
    'disconnect',
    'contour-bound',
    'tilt-lowerbound',
    'zfield',
    'coarse-grain',
    'interlace',
    'srw',
    'rates',
    'crossing',
    'harmonic-tail',
)

# Keys that change where or how fast a run happens, not what it computes
RUNTIME_KEYS = ('out', 'workers')

EXPERIMENT_DEFAULTS = {
    'green': {'displacements': [[0, 0, 0], [1, 0, 0], [1, 1, 0], [25, 0, 0]]},
    'cap': {'boxes': [1, 2, 3, 4], 'routes': False, 'radii': [20, 40],
            'variance_check': False, 'cube_radii': []},
    'sample': {'radius': 4, 'method': 'auto', 'guard_factor': 4.0},
    'decompose': {'radius': 6, 'U_radius': 3, 'n_mc': 10_000},
    'disconnect': {'N': 2, 'M': 2.0, 'alphas': [-1.0, -0.5, 0.0, 0.5], 'method': 'auto'},
    'contour-bound': {'N': 4, 'M': 2.0, 'alpha': -1.0, 'n_mc': 10_000, 'confidence': 0.99},
    'tilt-lowerbound': {'N': 6, 'M': 2.0, 'alpha': -0.5, 'plateau': -1.0, 'eta': 0.1,
                        'n_mc': 2000},
    'zfield': {'L': 4, 'K_list': [2, 3, 4, 5], 'sites': [[0, 0, 0]], 'n_mc': 10_000},
    'coarse-grain': {'N': 8, 'M': 2.0, 'L': 4, 'K': 2, 'gamma': 0.5, 'delta': 0.0, 'a': 1.0,
                     'n_mc': 100, 'guard_factor': 2.0, 'connectivity': 'nearest'},
    'interlace': {'N': 3, 'M': 2.0, 'u_grid': [0.1, 0.25, 0.5, 1.0], 'guard_factor': 4.0,
                  'origin_check': True},
    'srw': {'N': 3, 'M': 2.0, 'guard_factors': [2.0, 4.0], 'u': 0.5},
    'rates': {'variants': list(RATE_VARIANTS), 'alphas': [-1.0, -0.5, 0.0], 'h': 1.0,
              'u_grid': [0.1, 0.25, 0.5], 'epsilon': 0.0, 'eta': 0.0},
    'crossing': {'L': 4, 'alphas': [-0.5, 0.0, 0.5, 1.0]},
    'harmonic-tail': {'L': 2, 'K_list': [2, 4], 'levels': [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.8],
                      'n_mc': 2000},
}

# Experiments whose geometry is a disconnection sphere B_{[MN]}
SPHERE_EXPERIMENTS = ('disconnect', 'contour-bound', 'tilt-lowerbound', 'coarse-grain',
                      'interlace', 'srw')


@dataclass(frozen=True)
class ExperimentConfig:
    """A validated experiment configuration."""

    experiment: str
    params: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.params[key]

    def get(self, key, default=None):
        return self.params.get(key, default)

    @property
    def seed(self):
        return self.params['seed']

    @property
    def n_mc(self):
        return self.params['n_mc']

    @property
    def workers(self):
        return self.params.get('workers')

    def canonical_json(self):
        """Sorted, compact JSON of everything that determines the results."""
        content = {k: v for k, v in self.params.items() if k not in RUNTIME_KEYS}
        return json.dumps(content, sort_keys=True, separators=(',', ':'))

    @property
    def config_hash(self):
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


class ExperimentConfigSerializer(serializers.Serializer):
    experiment = serializers.ChoiceField(choices=EXPERIMENTS)

    # Monte Carlo
    n_mc = serializers.IntegerField(min_value=1, required=False)
    seed = serializers.IntegerField(min_value=0, default=0)
    workers = serializers.IntegerField(min_value=1, required=False)
    out = serializers.CharField(required=False, allow_blank=False)

    # Geometry
    d = serializers.IntegerField(min_value=3, default=3)
    N = serializers.IntegerField(min_value=1, required=False)
    M = serializers.FloatField(min_value=1.0, required=False)
    L = serializers.IntegerField(min_value=1, required=False)
    K = serializers.IntegerField(min_value=2, required=False)
    K_list = serializers.ListField(child=serializers.IntegerField(min_value=2), required=False,
                                   allow_empty=False)
    radius = serializers.IntegerField(min_value=0, required=False)
    U_radius = serializers.IntegerField(min_value=0, required=False)
    boxes = serializers.ListField(child=serializers.IntegerField(min_value=0), required=False)
    radii = serializers.ListField(child=serializers.IntegerField(min_value=1), required=False)
    cube_radii = serializers.ListField(child=serializers.IntegerField(min_value=1), required=False)
    displacements = serializers.ListField(child=serializers.ListField(child=serializers.IntegerField()),
                                          required=False, allow_empty=False)
    sites = serializers.ListField(child=serializers.ListField(child=serializers.IntegerField()),
                                  required=False, allow_empty=False)
    kappa = serializers.FloatField(required=False)

    # Levels
    alpha = serializers.FloatField(required=False)
    alphas = serializers.ListField(child=serializers.FloatField(), required=False, allow_empty=False)
    gamma = serializers.FloatField(required=False)
    delta = serializers.FloatField(required=False)
    a = serializers.FloatField(required=False)
    levels = serializers.ListField(child=serializers.FloatField(min_value=0.0), required=False,
                                   allow_empty=False)
    u = serializers.FloatField(required=False)
    u_grid = serializers.ListField(child=serializers.FloatField(), required=False, allow_empty=False)
    h = serializers.FloatField(required=False)
    epsilon = serializers.FloatField(min_value=0.0, required=False)
    eta = serializers.FloatField(min_value=0.0, required=False)
    plateau = serializers.FloatField(required=False)
    confidence = serializers.FloatField(min_value=0.5, max_value=1.0, required=False)
    cap_cube = serializers.FloatField(required=False)
    variants = serializers.ListField(child=serializers.ChoiceField(choices=RATE_VARIANTS),
                                     required=False, allow_empty=False)

    # Sampling
    method = serializers.ChoiceField(choices=FieldSampler.METHODS, required=False)
    guard_factor = serializers.FloatField(required=False)
    guard_factors = serializers.ListField(child=serializers.FloatField(), required=False,
                                          allow_empty=False)
    connectivity = serializers.ChoiceField(choices=CONNECTIVITIES, required=False)

    # Switches
    routes = serializers.BooleanField(required=False)
    variance_check = serializers.BooleanField(required=False)
    origin_check = serializers.BooleanField(required=False)

    def validate(self, attrs):
        experiment = attrs['experiment']
        for key, value in EXPERIMENT_DEFAULTS[experiment].items():
            attrs.setdefault(key, value)
        attrs.setdefault('n_mc', 1000)

        errors = {}

        def fail(key, message):
            errors.setdefault(key, []).append(message)

        d = attrs['d']
        if experiment in SPHERE_EXPERIMENTS:
            try:
                sphere_radius(attrs['N'], attrs['M'])
            except GeometryError as exc:
                fail('M', str(exc))

        for key in ('guard_factor',):
            if key in attrs and attrs[key] < 2:
                fail(key, f'guard_factor must be >= 2, got {attrs[key]}')
        for value in attrs.get('guard_factors', []):
            if value < 2:
                fail('guard_factors', f'guard factors must be >= 2, got {value}')

        if experiment == 'contour-bound' and not attrs['alpha'] < 0:
            fail('alpha', f'contour bound needs alpha < 0, got {attrs["alpha"]}')

        if experiment == 'coarse-grain':
            if not attrs['gamma'] > attrs['delta']:
                fail('gamma', f'need gamma > delta, got gamma={attrs["gamma"]}, delta={attrs["delta"]}')
            if not attrs['a'] > 0:
                fail('a', f'need a > 0, got {attrs["a"]}')
            if 'M' not in errors and not enumerate_columns(attrs['N'], attrs['M'], attrs['L'], d):
                fail('L', f'no column of {attrs["L"]}-boxes fits N={attrs["N"]}, M={attrs["M"]}')

        if 'kappa' in attrs:
            kappa, N = attrs['kappa'], attrs.get('N', 0)
            if not 0 < kappa < 0.1:
                fail('kappa', f'kappa must be in (0, 1/10), got {kappa}')
            elif math.floor((1 + kappa) * N) < N + 1:
                fail('kappa', f'(1 + kappa) N must be at least N + 1 (N={N})')

        if experiment in ('interlace', 'srw'):
            for u in attrs.get('u_grid', []) + ([attrs['u']] if 'u' in attrs else []):
                if u <= 0:
                    fail('u_grid' if experiment == 'interlace' else 'u', f'u must be positive, got {u}')

        if experiment == 'zfield':
            sites = attrs['sites']
            L = attrs['L']
            if any(len(z) != d for z in sites):
                fail('sites', f'every site needs {d} coordinates')
            elif any(v % L for z in sites for v in z):
                fail('sites', f'sites must lie on the coarse lattice {L}Z^{d}')
            else:
                for K in attrs['K_list']:
                    distance = BoxHierarchy.separation(L, K)
                    if not separated(sites, distance):
                        fail('sites', f'K={K}: sites must be at mutual distance >= L + 2KL = {distance}')

        if experiment == 'green' and any(len(x) != d for x in attrs['displacements']):
            fail('displacements', f'every displacement needs {d} coordinates')

        if experiment == 'decompose' and attrs['U_radius'] + 1 > attrs['radius']:
            fail('U_radius', 'U and its boundary must fit inside the window')

        if errors:
            raise serializers.ValidationError(errors)
        return attrs

    def create(self, validated_data):
        data = self.to_representation(validated_data)
        return ExperimentConfig(data['experiment'], dict(data))
