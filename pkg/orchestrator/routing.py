from django.urls import re_path
from . import consumers

websocket_urlpatterns = [
    re_path(r'ws/experiments/(?P<experiment_id>\d+)/$', consumers.ExperimentProgressConsumer.as_asgi()),
]
