"""
Celery tasks for experiments stored in the database.
"""
import logging
from pathlib import Path

from celery import shared_task
from django.apps import apps
from django.core.exceptions import ImproperlyConfigured
from django.utils import timezone

from main.exceptions import ExperimentError

logger = logging.getLogger(__name__)


@shared_task(bind=True, max_retries=1, default_retry_delay=60)
def run_experiment_task(self, experiment_id):
    """Run a stored experiment; each finished run is saved as an ExperimentRun."""
    Experiment = apps.get_model('orchestrator', 'Experiment')
    ExperimentRun = apps.get_model('orchestrator', 'ExperimentRun')
    try:
        experiment = Experiment.objects.get(id=experiment_id)
    except Experiment.DoesNotExist:
        logger.error(f"Experiment {experiment_id} does not exist")
        return {'success': False, 'error': 'Experiment not found'}

    from .config import ExperimentConfig
    from .runner import default_output_dir, run_experiment

    try:
        config = ExperimentConfig.from_data(experiment.config, source=f"experiment {experiment_id}")
    except ImproperlyConfigured as e:
        _mark_failed(experiment, e)
        return {'success': False, 'error': str(e)}

    if not experiment.output_dir:
        experiment.output_dir = str(default_output_dir(config))
    experiment.status = 'running'
    experiment.started_at = timezone.now()
    experiment.error_message = ''
    experiment.save(update_fields=['output_dir', 'status', 'started_at', 'error_message'])
    # a retry starts the repetitions over
    experiment.runs.all().delete()

    try:
        report = run_experiment(
            config, Path(experiment.output_dir),
            on_run=lambda run: ExperimentRun.from_record(experiment, run),
        )
    except ExperimentError as e:
        _mark_failed(experiment, e)
        return {'success': False, 'error': str(e)}
    except Exception as e:
        logger.error(f"Experiment {experiment_id} crashed: {e}")
        if self.request.retries >= self.max_retries:
            _mark_failed(experiment, e)
            raise
        raise self.retry(exc=e)

    experiment.report = report.as_dict()
    experiment.notes = list(report.notes)
    experiment.status = 'completed'
    experiment.finished_at = timezone.now()
    experiment.save(update_fields=['report', 'notes', 'status', 'finished_at'])
    logger.info(f"Experiment {experiment.name} completed: {len(report.completed_runs)} runs")
    return {
        'success': True,
        'experiment_id': experiment_id,
        'runs_completed': len(report.completed_runs),
        'runs_failed': len(report.failed_runs),
    }


def _mark_failed(experiment, error):
    experiment.status = 'failed'
    experiment.error_message = str(error)
    experiment.finished_at = timezone.now()
    experiment.save(update_fields=['status', 'error_message', 'finished_at'])
    logger.warning(f"Experiment {experiment.pk} failed: {error}")
