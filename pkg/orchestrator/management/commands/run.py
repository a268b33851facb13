import json

from django.core.exceptions import ImproperlyConfigured
from django.core.management.base import BaseCommand, CommandError

from device_sim.degradation import PRESETS
from main.exceptions import DosbenchError
from orchestrator.config import ExperimentConfig, RunMode


class Command(BaseCommand):
    help = "Run a DoS timing experiment from a JSON config and write captures, report.json and plot data."

    def add_arguments(self, parser):
        parser.add_argument('--config', help='Experiment config JSON (defaults apply when omitted)')
        mode = parser.add_mutually_exclusive_group()
        mode.add_argument('--live', dest='mode', action='store_const', const=RunMode.LIVE.value,
                          help='Real device or workload host plus a real flood')
        mode.add_argument('--scripted', dest='mode', action='store_const', const=RunMode.SCRIPTED.value,
                          help='Local device simulator with scripted degradation')
        parser.add_argument('--out', help='Output directory (default: DOSBENCH_OUTPUT_DIR/<name>-<timestamp>)')
        parser.add_argument('--scenario', choices=['gnss', 'ad-stack'])
        parser.add_argument('--repetitions', type=int)
        parser.add_argument('--seed', type=int)
        parser.add_argument('--preset', choices=PRESETS)
        parser.add_argument('--time-scale', type=float, help='Simulated seconds per wall second (scripted mode)')
        parser.add_argument('--compare-presets', nargs='+', choices=PRESETS, metavar='PRESET',
                            help='Run the GNSS protocol once per preset and compare the pooled rates')
        parser.add_argument('--queue', action='store_true',
                            help='Store the experiment and hand it to a Celery worker instead of running here')

    def handle(self, *args, **options):
        try:
            config = ExperimentConfig.load(
                options['config'],
                mode=options['mode'],
                scenario=options['scenario'],
                repetitions=options['repetitions'],
                seed=options['seed'],
                preset=options['preset'],
                time_scale=options['time_scale'],
            )
        except ImproperlyConfigured as e:
            raise CommandError(str(e))

        if options['queue']:
            from orchestrator.models import Experiment
            from orchestrator.tasks import run_experiment_task
            experiment = Experiment.from_config(config, options['out'])
            run_experiment_task.delay(experiment.pk)
            self.stdout.write(self.style.SUCCESS(
                f"Experiment {experiment.pk} queued; progress on ws/experiments/{experiment.pk}/"
            ))
            return

        from orchestrator.runner import compare_presets, default_output_dir, run_experiment
        out_dir = options['out'] or default_output_dir(config)
        try:
            if options['compare_presets']:
                comparison = compare_presets(config, options['compare_presets'], out_dir)
                self.stdout.write(json.dumps(comparison, indent=2))
                return
            report = run_experiment(config, out_dir)
        except KeyboardInterrupt:
            raise CommandError("Experiment interrupted")
        except (DosbenchError, ImproperlyConfigured, ValueError, OSError) as e:
            raise CommandError(str(e))

        self.stdout.write(json.dumps({
            'output_dir': str(out_dir),
            'runs_completed': len(report.completed_runs),
            'runs_failed': len(report.failed_runs),
            'pooled': report.pooled,
            'notes': report.notes,
        }, indent=2, default=str))
        self.stdout.write(self.style.SUCCESS(f"Report written to {out_dir}/report.json"))
