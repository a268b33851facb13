import json

from django.core.management.base import BaseCommand, CommandError

from control_workload.benchmark import read_latency_log
from main.exceptions import DosbenchError
from timing_analysis.reports import analyze_latency_log, latency_plot_data, write_report


class Command(BaseCommand):
    help = "Summarize a control-workload latency log."

    def add_arguments(self, parser):
        parser.add_argument('--log', required=True, help='CSV written by the workload command')
        parser.add_argument('--out', help='Report JSON path (default: stdout)')
        parser.add_argument('--label', default='workload')
        parser.add_argument('--emit-plot-data', metavar='DIR', help='Write CSV plot data to DIR')

    def handle(self, *args, **options):
        try:
            records = read_latency_log(options['log'])
            report = analyze_latency_log(records, options['label'])
            if options['emit_plot_data']:
                latency_plot_data(options['emit_plot_data'], records, options['label'])
        except (DosbenchError, OSError, ValueError) as e:
            raise CommandError(str(e))

        if options['out']:
            write_report(options['out'], report)
            self.stdout.write(self.style.SUCCESS(f"Report written to {options['out']}"))
        else:
            self.stdout.write(json.dumps(report, indent=2))
