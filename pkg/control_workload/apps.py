from django.apps import AppConfig


class ControlWorkloadConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'control_workload'
    verbose_name = 'Control-loop workload'
