import json

from django.core.management.base import BaseCommand, CommandError

from main.exceptions import DosbenchError
from stream_codec.recorder import CaptureMeta, meta_path_for
from timing_analysis.reports import analyze_capture, capture_plot_data, write_report


class Command(BaseCommand):
    help = "Compute per-phase timing metrics of a recorded capture."

    def add_arguments(self, parser):
        parser.add_argument('--capture', required=True, help='.anb capture file')
        parser.add_argument('--meta', help='Sidecar JSON (default: next to the capture)')
        parser.add_argument('--attack-at', type=float, default=10.0, help='Run-relative attack start in seconds')
        parser.add_argument('--duration', type=float, default=None, help='Run length (default: from the sidecar)')
        parser.add_argument('--out', help='Report JSON path (default: stdout)')
        parser.add_argument('--emit-plot-data', metavar='DIR', help='Write CSV plot data to DIR')

    def handle(self, *args, **options):
        meta_path = options['meta'] or meta_path_for(options['capture'])
        try:
            meta = CaptureMeta.read(meta_path)
        except (OSError, ValueError, TypeError) as e:
            raise CommandError(f"Cannot read capture metadata {meta_path}: {e}")

        try:
            report = analyze_capture(options['capture'], meta, options['attack_at'], options['duration'])
            if options['emit_plot_data']:
                capture_plot_data(options['emit_plot_data'], options['capture'], report)
        except (DosbenchError, OSError, ValueError) as e:
            raise CommandError(str(e))

        if options['out']:
            write_report(options['out'], report)
            self.stdout.write(self.style.SUCCESS(f"Report written to {options['out']}"))
        else:
            self.stdout.write(json.dumps(report, indent=2, default=str))
