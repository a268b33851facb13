import json

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from main.exceptions import DosbenchError
from stream_codec.recorder import CAPTURE_SUFFIX, record


class Command(BaseCommand):
    help = "Capture the raw device byte stream to an .anb file with a JSON sidecar."

    def add_arguments(self, parser):
        parser.add_argument('--host', default=getattr(settings, 'DEVICE_SIM_HOST', '127.0.0.1'))
        parser.add_argument('--port', type=int, default=getattr(settings, 'DEVICE_SIM_PORT', 6001))
        parser.add_argument('--out', required=True, help=f'Capture file ({CAPTURE_SUFFIX})')
        parser.add_argument('--duration', type=float, default=None, help='Seconds to capture (default: until close)')

    def handle(self, *args, **options):
        if not options['out'].endswith(CAPTURE_SUFFIX):
            self.stderr.write(self.style.WARNING(f"Capture file does not use the {CAPTURE_SUFFIX} extension"))
        try:
            meta = record((options['host'], options['port']), options['out'], duration_s=options['duration'])
        except KeyboardInterrupt:
            raise CommandError("Capture interrupted")
        except DosbenchError as e:
            raise CommandError(str(e))
        self.stdout.write(json.dumps(meta.as_dict(), indent=2))
