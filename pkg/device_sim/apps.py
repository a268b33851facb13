from django.apps import AppConfig


class DeviceSimConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'device_sim'
    verbose_name = 'GNSS device simulator'
