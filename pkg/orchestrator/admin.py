from django.contrib import admin
from django.utils.html import format_html

from .models import Experiment, ExperimentRun


class ExperimentRunInline(admin.TabularInline):
    model = ExperimentRun
    extra = 0
    fields = ('index', 'phase', 'status', 'seed', 'capture_path', 'error_message')
    readonly_fields = fields
    can_delete = False

    def has_add_permission(self, request, obj=None):
        return False


@admin.register(Experiment)
class ExperimentAdmin(admin.ModelAdmin):
    list_display = ('name', 'scenario', 'mode', 'status_badge', 'run_counts', 'short_hash', 'created_at')
    list_filter = ('status', 'scenario', 'mode', 'created_at')
    search_fields = ('name', 'config_hash', 'output_dir')
    readonly_fields = ('config_hash', 'report', 'notes', 'created_at', 'started_at', 'finished_at')
    inlines = [ExperimentRunInline]

    STATUS_COLORS = {
        'pending': '#6c757d',
        'running': '#0d6efd',
        'completed': '#198754',
        'failed': '#dc3545',
    }

    def status_badge(self, obj):
        return format_html(
            '<span style="color: white; background: {}; padding: 2px 8px; border-radius: 4px;">{}</span>',
            self.STATUS_COLORS.get(obj.status, '#6c757d'), obj.get_status_display(),
        )
    status_badge.short_description = 'Status'

    def run_counts(self, obj):
        completed = obj.runs.filter(status='completed').count()
        return f"{completed}/{obj.runs.count()}"
    run_counts.short_description = 'Runs ok'

    def short_hash(self, obj):
        return obj.config_hash[:12]
    short_hash.short_description = 'Config'


@admin.register(ExperimentRun)
class ExperimentRunAdmin(admin.ModelAdmin):
    list_display = ('experiment', 'index', 'phase', 'status', 'seed', 'created_at')
    list_filter = ('status', 'phase')
    search_fields = ('experiment__name', 'capture_path', 'error_message')
    readonly_fields = ('metrics', 'flood_stats', 'created_at')
