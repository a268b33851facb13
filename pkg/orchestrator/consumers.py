# orchestrator/consumers.py
import json
import logging

from channels.db import database_sync_to_async
from channels.generic.websocket import AsyncWebsocketConsumer

logger = logging.getLogger(__name__)


class ExperimentProgressConsumer(AsyncWebsocketConsumer):
    """Read-only feed of run and status updates for one experiment."""

    async def connect(self):
        self.experiment_id = int(self.scope['url_route']['kwargs']['experiment_id'])
        snapshot = await self.get_snapshot(self.experiment_id)
        if snapshot is None:
            await self.close()
            return

        self.group_name = f"experiment_{self.experiment_id}"
        await self.channel_layer.group_add(self.group_name, self.channel_name)
        await self.accept()
        logger.info(f"Websocket joined {self.group_name}")
        await self.send(text_data=json.dumps({'type': 'connection_established', **snapshot}))

    async def disconnect(self, close_code):
        if hasattr(self, 'group_name'):
            await self.channel_layer.group_discard(self.group_name, self.channel_name)

    async def receive(self, text_data=None, bytes_data=None):
        await self.send(text_data=json.dumps({'type': 'error', 'message': 'This feed is read-only'}))

    async def progress_update(self, event):
        await self.send(text_data=json.dumps(event.get('data', {})))

    @database_sync_to_async
    def get_snapshot(self, experiment_id):
        from .models import Experiment
        try:
            experiment = Experiment.objects.get(pk=experiment_id)
        except Experiment.DoesNotExist:
            return None
        return {
            'experiment_id': experiment.pk,
            'name': experiment.name,
            'status': experiment.status,
            'runs_finished': experiment.runs.count(),
            'repetitions': experiment.config.get('repetitions'),
        }
