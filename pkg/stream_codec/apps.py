from django.apps import AppConfig


class StreamCodecConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'stream_codec'
    verbose_name = 'Solution stream codec'
