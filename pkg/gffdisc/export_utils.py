"""
Report export for gffdisc experiments.

Writes one CSV and one JSON file per run:
- CSV: header row, one data row per grid point
- JSON: {"provenance": {...}, "rows": [...]} with the CSV keys in every row

Data rows carry no timings, so reruns with the same config give identical rows;
timings and versions live in the provenance block. Files are written to a temporary
name and renamed into place, so a failed run leaves nothing behind.
"""

import csv
import io
import json
import logging
import math
import os
import platform
import tempfile
from datetime import datetime, timezone
from pathlib import Path

import django
import numpy as np
import scipy

logger = logging.getLogger(__name__)


def _plain(value):
    """Python scalar for numpy values; non-finite floats become None in JSON."""
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, (tuple, list, np.ndarray)):
        return [_plain(v) for v in value]
    return value


def _cell(value):
    if isinstance(value, np.generic):
        value = value.item()
    if value is None:
        return ''
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, (tuple, list, np.ndarray)):
        return ' '.join(_cell(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def versions():
    return {
        'python': platform.python_version(),
        'numpy': np.__version__,
        'scipy': scipy.__version__,
        'django': django.get_version(),
    }


def atomic_write_texts(texts):
    """
    Write {path: text} so that either every file is replaced or none is: all texts go
    to temporary files first and are renamed into place only after every write worked.
    """
    staged = []
    try:
        for path, text in texts.items():
            path = Path(path)
            path.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f'.{path.name}.', suffix='.tmp')
            staged.append((Path(tmp), path))
            with os.fdopen(fd, 'w', newline='') as handle:
                handle.write(text)
        for tmp, path in staged:
            os.replace(tmp, path)
    except BaseException:
        for tmp, _ in staged:
            tmp.unlink(missing_ok=True)
        raise
    return [path for _, path in staged]


class ReportExporter:
    """
    CSV / JSON writer for the rows of one experiment run.

    Usage:
        exporter = ReportExporter(rows, config, wall_time=12.5)
        paths = exporter.write(out_dir)
    """

    def __init__(self, rows, config, wall_time=0.0, extra_files=None):
        """
        Args:
            rows: list of dicts, one per grid point
            config: the ExperimentConfig of the run
            wall_time: seconds spent computing the rows
            extra_files: {suffix: text} written next to the report (e.g. field snapshots)
        """
        self.rows = list(rows)
        self.config = config
        self.wall_time = wall_time
        self.extra_files = extra_files or {}

    @property
    def fieldnames(self):
        """Keys of all rows, in order of first appearance."""
        names = []
        for row in self.rows:
            for key in row:
                if key not in names:
                    names.append(key)
        return names

    @property
    def basename(self):
        return f'{self.config.experiment}-{self.config.config_hash[:8]}'

    def provenance(self):
        return {
            'experiment': self.config.experiment,
            'config': self.config.params,
            'config_hash': self.config.config_hash,
            'seed': self.config.seed,
            'versions': versions(),
            'wall_time_s': round(self.wall_time, 3),
            'created_at': datetime.now(timezone.utc).isoformat(timespec='seconds'),
        }

    def to_csv(self):
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator='\n')
        names = self.fieldnames
        writer.writerow(names)
        for row in self.rows:
            writer.writerow([_cell(row.get(name)) for name in names])
        return buffer.getvalue()

    def to_json(self):
        names = self.fieldnames
        rows = [{name: _plain(row.get(name)) for name in names} for row in self.rows]
        return json.dumps({'provenance': self.provenance(), 'rows': rows}, indent=2) + '\n'

    def write(self, out_dir):
        """Write <experiment>-<hash8>.csv / .json (and extra files); returns their paths."""
        out_dir = Path(out_dir)
        texts = {'.csv': self.to_csv(), '.json': self.to_json()}
        texts.update(self.extra_files)
        paths = atomic_write_texts({out_dir / f'{self.basename}{suffix}': text for suffix, text in texts.items()})
        logger.info('wrote %d rows to %s', len(self.rows), ', '.join(str(p) for p in paths))
        return paths


def format_row(row):
    """One-line key=value rendering of a report row for terminal output."""
    return '  '.join(f'{key}={_cell(value)}' for key, value in row.items())
