# Generated by Django 5.2.6 on 2026-10-18 09:40

import django.utils.timezone
from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = []

    operations = [
        migrations.CreateModel(
            name="ExperimentRun",
            fields=[
                (
                    "id",
                    models.BigAutoField(
                        auto_created=True,
                        primary_key=True,
                        serialize=False,
                        verbose_name="ID",
                    ),
                ),
                (
                    "experiment",
                    models.CharField(
                        help_text="Experiment (CLI subcommand) name", max_length=40
                    ),
                ),
                (
                    "status",
                    models.CharField(
                        choices=[
                            ("RUNNING", "Running"),
                            ("COMPLETED", "Completed"),
                            ("FAILED", "Failed"),
                        ],
                        default="RUNNING",
                        help_text="Current state of the run",
                        max_length=20,
                    ),
                ),
                (
                    "config",
                    models.JSONField(
                        default=dict, help_text="Validated experiment configuration"
                    ),
                ),
                (
                    "config_hash",
                    models.CharField(
                        db_index=True,
                        help_text="SHA-256 of the canonical configuration JSON",
                        max_length=64,
                    ),
                ),
                (
                    "seed",
                    models.BigIntegerField(
                        help_text="Master seed of the Monte Carlo streams"
                    ),
                ),
                (
                    "output_paths",
                    models.JSONField(
                        blank=True,
                        default=list,
                        help_text="Report files written by the run",
                    ),
                ),
                (
                    "row_count",
                    models.PositiveIntegerField(
                        default=0, help_text="Number of data rows in the report"
                    ),
                ),
                (
                    "error_message",
                    models.TextField(
                        blank=True,
                        default="",
                        help_text="Failure message when the run did not complete",
                    ),
                ),
                (
                    "started_at",
                    models.DateTimeField(default=django.utils.timezone.now),
                ),
                ("finished_at", models.DateTimeField(blank=True, null=True)),
            ],
            options={
                "verbose_name": "Experiment Run",
                "verbose_name_plural": "Experiment Runs",
                "db_table": "gffdisc_experiment_run",
                "ordering": ["-started_at"],
                "indexes": [
                    models.Index(
                        fields=["experiment", "-started_at"],
                        name="gffdisc_run_experiment_idx",
                    ),
                    models.Index(
                        fields=["status", "-started_at"],
                        name="gffdisc_run_status_idx",
                    ),
                ],
            },
        ),
    ]
