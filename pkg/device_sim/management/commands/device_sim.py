import json
import threading

from django.conf import settings
from django.core.exceptions import ImproperlyConfigured
from django.core.management.base import BaseCommand, CommandError
from pydantic import ValidationError

from device_sim.degradation import PRESETS, DegradationScript, preset_script
from device_sim.schedule import SamplingSchedule
from device_sim.server import stream
from main.exceptions import DosbenchError


class Command(BaseCommand):
    help = "Serve simulated GNSS-RTK solutions as binary packets over TCP."

    def add_arguments(self, parser):
        parser.add_argument('--host', default=getattr(settings, 'DEVICE_SIM_HOST', '127.0.0.1'))
        parser.add_argument('--port', type=int, default=getattr(settings, 'DEVICE_SIM_PORT', 6001))
        parser.add_argument('--duration', type=float, default=30.0, help='Simulated run length in seconds')
        degradation = parser.add_mutually_exclusive_group()
        degradation.add_argument('--script', help='JSON degradation script')
        degradation.add_argument('--preset', choices=PRESETS, default='none')
        parser.add_argument('--attack-at', type=float, default=10.0, help='Attack start for --preset')
        parser.add_argument('--seed', type=int, default=0)
        parser.add_argument('--time-scale', type=float, default=1.0, help='Simulated seconds per wall second')
        parser.add_argument('--wait-for-client', action='store_true', help='Start the run clock at the first connection')
        parser.add_argument('--start-tow', type=float, default=None, help='GPS time of week at run start (default: now)')

    def handle(self, *args, **options):
        try:
            if options['script']:
                script = DegradationScript.from_json(options['script'])
            else:
                script = preset_script(options['preset'], options['duration'], options['attack_at'], options['seed'])
            schedule = SamplingSchedule()
        except (ImproperlyConfigured, ValidationError, ValueError, OSError) as e:
            raise CommandError(str(e))

        stop = threading.Event()
        try:
            summary = stream(
                (options['host'], options['port']), schedule, script=script, duration_s=options['duration'],
                seed=options['seed'], time_scale=options['time_scale'], wait_for_client=options['wait_for_client'],
                start_tow_s=options['start_tow'], stop_event=stop,
            )
        except KeyboardInterrupt:
            stop.set()
            raise CommandError("Device simulator interrupted")
        except (DosbenchError, ImproperlyConfigured, ValueError) as e:
            raise CommandError(str(e))

        self.stdout.write(json.dumps(summary.as_dict(), indent=2))
