"""
Admin registration for the experiment run registry.
"""

from django.contrib import admin
from .models import ExperimentRun


@admin.register(ExperimentRun)
class ExperimentRunAdmin(admin.ModelAdmin):
    list_display = ['experiment', 'status', 'config_hash', 'seed', 'row_count', 'started_at', 'finished_at']
    list_filter = ['experiment', 'status']
    search_fields = ['experiment', 'config_hash', 'error_message']
    readonly_fields = ['config', 'config_hash', 'seed', 'output_paths', 'row_count',
                       'error_message', 'started_at', 'finished_at']
    date_hierarchy = 'started_at'
