# orchestrator/signals.py
import logging

from asgiref.sync import async_to_sync
from channels.layers import get_channel_layer
from django.db.models.signals import post_save
from django.dispatch import receiver

from .models import Experiment, ExperimentRun

logger = logging.getLogger(__name__)


def push_progress(experiment: Experiment, data: dict):
    """Send ``data`` to every websocket watching ``experiment``."""
    channel_layer = get_channel_layer()
    if channel_layer is None:
        return
    try:
        async_to_sync(channel_layer.group_send)(
            experiment.group_name,
            {
                'type': 'progress_update',  # ExperimentProgressConsumer.progress_update
                'data': data,
            }
        )
    except Exception as e:
        logger.error(f"Failed to push progress for experiment {experiment.pk}: {e}")


@receiver(post_save, sender=ExperimentRun)
def announce_finished_run(sender, instance, created, **kwargs):
    if created:
        push_progress(instance.experiment, instance.progress_message())


@receiver(post_save, sender=Experiment)
def announce_status_change(sender, instance, created, update_fields=None, **kwargs):
    if created or (update_fields is not None and 'status' not in update_fields):
        return
    push_progress(instance, {
        'type': 'experiment_status',
        'experiment_id': instance.pk,
        'status': instance.status,
        'error': instance.error_message,
    })
