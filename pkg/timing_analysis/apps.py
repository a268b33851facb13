from django.apps import AppConfig


class TimingAnalysisConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'timing_analysis'
    verbose_name = 'Timing analysis'
