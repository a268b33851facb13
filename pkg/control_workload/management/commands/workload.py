import json

from django.core.exceptions import ImproperlyConfigured
from django.core.management.base import BaseCommand, CommandError

from control_workload.benchmark import LatencyLogWriter, run_benchmark
from control_workload.mpc import ControllerConfig, MpcController
from main.exceptions import DosbenchError
from timing_analysis.metrics import latency_summary


class Command(BaseCommand):
    help = "Run the closed-loop MPC workload and log per-iteration latency to CSV."

    def add_arguments(self, parser):
        parser.add_argument('--iterations', type=int, required=True)
        parser.add_argument('--dt-ms', type=float, default=None, help='Control period (default MPC_DT_MS)')
        parser.add_argument('--out', required=True, help='CSV latency log path')
        parser.add_argument('--horizon', type=int, default=None)
        parser.add_argument('--solver-iterations', type=int, default=None)

    def handle(self, *args, **options):
        try:
            config = ControllerConfig.from_settings(
                dt=options['dt_ms'] / 1000.0 if options['dt_ms'] else None,
                horizon=options['horizon'],
                iterations=options['solver_iterations'],
            )
        except ValueError as e:
            raise CommandError(f"Invalid controller configuration: {e}")

        try:
            records = run_benchmark(
                options['iterations'],
                controller=MpcController(config),
                log_sink=LatencyLogWriter(options['out']),
            )
        except (ImproperlyConfigured, DosbenchError, ValueError, OSError) as e:
            raise CommandError(str(e))

        summary = latency_summary(records)
        self.stdout.write(json.dumps(summary.as_dict(include_histogram=False), indent=2))
        self.stdout.write(self.style.SUCCESS(f"{len(records)} records written to {options['out']}"))
