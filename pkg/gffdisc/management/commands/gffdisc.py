"""
Management command running one gffdisc experiment.

Usage:
    python manage.py gffdisc cap --box 4
    python manage.py gffdisc disconnect --config runs/disconnect.json --seed 7 --out var/reports
    python manage.py gffdisc zfield --K-list 2 3 4 5 --set sites='[[0,0,0],[40,0,0]]'

Flags override values of the --config file key by key. Exit codes: 0 on success,
2 on invalid configuration, 3 when the computation fails.
"""
import json
from pathlib import Path

from django.core.management.base import BaseCommand, CommandError

from gffdisc.exceptions import GffdiscError
from gffdisc.export_utils import format_row
from gffdisc.serializers import EXPERIMENTS, ExperimentConfigSerializer
from gffdisc.services import ExperimentService

# Rows beyond this are only written to the report files
ECHO_ROWS = 20

# (flag, dest, argparse options) for the common parameter overrides
OVERRIDES = [
    ('--n-mc', 'n_mc', {'type': int, 'help': 'Monte Carlo sample count'}),
    ('--workers', 'workers', {'type': int, 'help': 'Worker processes (results do not depend on it)'}),
    ('--d', 'd', {'type': int, 'help': 'Lattice dimension (>= 3)'}),
    ('--N', 'N', {'type': int, 'help': 'Box radius N'}),
    ('--M', 'M', {'type': float, 'help': 'Sphere factor M (sphere radius [MN])'}),
    ('--L', 'L', {'type': int, 'help': 'Coarse-graining scale L'}),
    ('--K', 'K', {'type': int, 'help': 'Box hierarchy factor K'}),
    ('--K-list', 'K_list', {'type': int, 'nargs': '+', 'help': 'Grid of K values'}),
    ('--box', 'boxes', {'type': int, 'nargs': '+', 'help': 'Box radii for cap'}),
    ('--radius', 'radius', {'type': int, 'help': 'Window radius for sample / decompose'}),
    ('--alpha', 'alpha', {'type': float, 'help': 'Level alpha'}),
    ('--alphas', 'alphas', {'type': float, 'nargs': '+', 'help': 'Grid of levels'}),
    ('--plateau', 'plateau', {'type': float, 'help': 'Tilt plateau height'}),
    ('--u', 'u', {'type': float, 'help': 'Interlacement level u'}),
    ('--u-grid', 'u_grid', {'type': float, 'nargs': '+', 'help': 'Grid of interlacement levels'}),
    ('--method', 'method', {'help': 'Field sampler: auto, dense or embedded'}),
    ('--guard-factor', 'guard_factor', {'type': float, 'help': 'Guard box factor (>= 2)'}),
    ('--connectivity', 'connectivity', {'help': 'Cluster connectivity: nearest or star'}),
]


class Command(BaseCommand):
    help = 'Run a gffdisc experiment and write its CSV / JSON report'

    def add_arguments(self, parser):
        parser.add_argument(
            'subcommand',
            choices=EXPERIMENTS,
            help='Experiment to run',
        )
        parser.add_argument(
            '--config',
            help='JSON file with the experiment configuration',
        )
        parser.add_argument(
            '--seed',
            type=int,
            help='Master seed of the Monte Carlo streams',
        )
        parser.add_argument(
            '--out',
            help='Report directory (default GFFDISC_OUTPUT_DIR)',
        )
        for flag, dest, kwargs in OVERRIDES:
            parser.add_argument(flag, dest=dest, **kwargs)
        parser.add_argument(
            '--set',
            dest='assignments',
            action='append',
            metavar='KEY=VALUE',
            help='Override any config key; VALUE is parsed as JSON when possible',
        )

    def handle(self, *args, **options):
        params = self.load_config(options['config'])
        experiment = options['subcommand']
        if params.get('experiment', experiment) != experiment:
            self.stdout.write(self.style.WARNING(
                f'config file is for {params["experiment"]!r}; running {experiment!r}'
            ))
        params['experiment'] = experiment
        params.update(self.collect_overrides(options))

        serializer = ExperimentConfigSerializer(data=params)
        if not serializer.is_valid():
            raise CommandError(self.format_errors(serializer.errors), returncode=2)
        config = serializer.save()

        self.stdout.write(f'Running {experiment} (config {config.config_hash[:8]}, seed {config.seed})...')
        try:
            result = ExperimentService.run(config)
        except GffdiscError as exc:
            raise CommandError(f'{type(exc).__name__}: {exc}', returncode=exc.exit_code)
        except Exception as exc:
            raise CommandError(f'{experiment} failed: {type(exc).__name__}: {exc}', returncode=3)

        for row in result.rows[:ECHO_ROWS]:
            self.stdout.write(f'  {format_row(row)}')
        if len(result.rows) > ECHO_ROWS:
            self.stdout.write(f'  ... {len(result.rows) - ECHO_ROWS} more rows')
        self.stdout.write(self.style.SUCCESS(
            f'✓ {experiment}: {len(result.rows)} rows written to '
            + ', '.join(str(path) for path in result.paths)
        ))

    def load_config(self, path):
        if not path:
            return {}
        try:
            data = json.loads(Path(path).read_text())
        except OSError as exc:
            raise CommandError(f'cannot read config {path}: {exc}', returncode=2)
        except json.JSONDecodeError as exc:
            raise CommandError(f'config {path} is not valid JSON: {exc}', returncode=2)
        if not isinstance(data, dict):
            raise CommandError(f'config {path} must hold a JSON object', returncode=2)
        return data

    def collect_overrides(self, options):
        overrides = {}
        for key in ('seed', 'out'):
            if options.get(key) is not None:
                overrides[key] = options[key]
        for _, dest, _ in OVERRIDES:
            if options.get(dest) is not None:
                overrides[dest] = options[dest]
        for item in options.get('assignments') or []:
            key, sep, raw = item.partition('=')
            if not sep or not key:
                raise CommandError(f'--set expects KEY=VALUE, got {item!r}', returncode=2)
            try:
                overrides[key] = json.loads(raw)
            except json.JSONDecodeError:
                overrides[key] = raw
        return overrides

    @staticmethod
    def format_errors(errors):
        lines = ['invalid configuration:']
        for key, messages in errors.items():
            for message in messages if isinstance(messages, list) else [messages]:
                lines.append(f'  {key}: {message}')
        return '\n'.join(lines)
