import json
import threading

from django.core.management.base import BaseCommand, CommandError
from pydantic import ValidationError

from main.exceptions import DosbenchError
from packet_forge.flood import FloodConfig, TransportMode, flood


class Command(BaseCommand):
    help = "Send an ICMP echo-request flood (raw ICMP or unprivileged UDP fallback) and print FloodStats as JSON."

    def add_arguments(self, parser):
        parser.add_argument('--target', required=True, help='Target host, optionally host:port for udp mode')
        parser.add_argument('--rate', type=int, required=True, help='Aggregate packets per second')
        parser.add_argument('--attackers', type=int, default=1, help='Number of logical senders')
        parser.add_argument('--duration', type=float, required=True, help='Duration in seconds')
        parser.add_argument('--payload-len', type=int, default=0, help='ICMP payload bytes (0 gives 28-byte packets)')
        parser.add_argument('--mode', choices=['icmp', 'udp'], default='icmp')

    def handle(self, *args, **options):
        host, _, port = options['target'].partition(':')
        fields = {
            'target_address': host,
            'attacker_count': options['attackers'],
            'target_rate_pps': options['rate'],
            'duration_s': options['duration'],
            'payload_len': options['payload_len'],
            'transport_mode': TransportMode.from_cli(options['mode']),
        }
        if port:
            fields['target_port'] = int(port)
        try:
            config = FloodConfig(**fields)
        except ValidationError as e:
            raise CommandError(f"Invalid flood configuration: {e}")

        stop = threading.Event()
        try:
            stats = flood(config, stop)
        except KeyboardInterrupt:
            stop.set()
            raise CommandError("Flood interrupted")
        except DosbenchError as e:
            raise CommandError(str(e))

        self.stdout.write(json.dumps(stats.as_dict(), indent=2))
