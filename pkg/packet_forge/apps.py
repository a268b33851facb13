from django.apps import AppConfig


class PacketForgeConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'packet_forge'
    verbose_name = 'ICMP flood generator'
