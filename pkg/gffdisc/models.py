"""
Run registry for gffdisc experiments.

Every invocation of an experiment leaves one ExperimentRun row: the validated
configuration, its hash and seed, the report files written and how the run ended.
"""

from django.db import models
from django.utils import timezone


class ExperimentRun(models.Model):
    """Provenance record of one experiment run."""

    STATUS_CHOICES = [
        ('RUNNING', 'Running'),
        ('COMPLETED', 'Completed'),
        ('FAILED', 'Failed'),
    ]

    experiment = models.CharField(
        max_length=40,
        help_text='Experiment (CLI subcommand) name'
    )

    status = models.CharField(
        max_length=20,
        choices=STATUS_CHOICES,
        default='RUNNING',
        help_text='Current state of the run'
    )

    # Configuration
    config = models.JSONField(
        default=dict,
        help_text='Validated experiment configuration'
    )

    config_hash = models.CharField(
        max_length=64,
        db_index=True,
        help_text='SHA-256 of the canonical configuration JSON'
    )

    seed = models.BigIntegerField(
        help_text='Master seed of the Monte Carlo streams'
    )

    # Results
    output_paths = models.JSONField(
        default=list,
        blank=True,
        help_text='Report files written by the run'
    )

    row_count = models.PositiveIntegerField(
        default=0,
        help_text='Number of data rows in the report'
    )

    error_message = models.TextField(
        blank=True,
        default='',
        help_text='Failure message when the run did not complete'
    )

    # Timing
    started_at = models.DateTimeField(default=timezone.now)
    finished_at = models.DateTimeField(null=True, blank=True)

    class Meta:
        db_table = 'gffdisc_experiment_run'
        verbose_name = 'Experiment Run'
        verbose_name_plural = 'Experiment Runs'
        ordering = ['-started_at']
        indexes = [
            models.Index(fields=['experiment', '-started_at'], name='gffdisc_run_experiment_idx'),
            models.Index(fields=['status', '-started_at'], name='gffdisc_run_status_idx'),
        ]

    def __str__(self):
        return f"{self.experiment} [{self.config_hash[:8]}] {self.status} - {self.started_at.strftime('%Y-%m-%d %H:%M')}"

    @property
    def duration(self):
        if self.finished_at is None:
            return None
        return (self.finished_at - self.started_at).total_seconds()

    def mark_completed(self, output_paths, row_count):
        self.status = 'COMPLETED'
        self.output_paths = [str(p) for p in output_paths]
        self.row_count = row_count
        self.finished_at = timezone.now()
        self.save(update_fields=['status', 'output_paths', 'row_count', 'finished_at'])

    def mark_failed(self, message):
        self.status = 'FAILED'
        self.error_message = message
        self.finished_at = timezone.now()
        self.save(update_fields=['status', 'error_message', 'finished_at'])
