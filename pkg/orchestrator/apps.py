from django.apps import AppConfig


class OrchestratorConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'orchestrator'
    verbose_name = 'Experiment orchestrator'

    def ready(self):
        import orchestrator.signals  # noqa: F401
