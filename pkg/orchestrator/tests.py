import csv
import json
import shutil
import tempfile
import threading
from io import StringIO
from pathlib import Path
from unittest import mock

from channels.db import database_sync_to_async
from channels.routing import URLRouter
from channels.testing import WebsocketCommunicator
from django.core.exceptions import ImproperlyConfigured
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, TestCase, TransactionTestCase

from device_sim.tests import serve_in_thread
from main.exceptions import EndpointError, ExperimentError, PrivilegeError
from packet_forge.flood import FloodConfig, TransportMode
from stream_codec.codec import decode_file
from stream_codec.recorder import record as real_record
from timing_analysis.series import PhaseWindow
from .config import ExperimentConfig, RunMode, Scenario, TargetConfig
from .models import Experiment, ExperimentRun
from .routing import websocket_urlpatterns
from .runner import RunStatus, compare_presets, resolve_transport, run_adstack_experiment, run_gnss_experiment
from .tasks import run_experiment_task

NOMINAL_INCREMENT_S = 1 / 64


def scripted_config(**overrides):
    data = {
        'name': 'test',
        'repetitions': 2,
        'seed': 7,
        'time_scale': 60.0,
        'start_tow_s': 345600.0,
        'target': {'host': '127.0.0.1', 'port': 0},
    }
    data.update(overrides)
    return ExperimentConfig.from_data(data)


def adstack_config(**overrides):
    data = {
        'name': 'adstack',
        'scenario': 'ad-stack',
        'repetitions': 1,
        'target': {'iterations': 100, 'solver_iterations': 10},
        'flood': {'target_rate_pps': 2000, 'transport_mode': 'udp-fallback'},
    }
    data.update(overrides)
    return ExperimentConfig.from_data(data)


class TempDirMixin:

    def make_tmp(self):
        tmp = tempfile.mkdtemp()
        self.addCleanup(shutil.rmtree, tmp, ignore_errors=True)
        return Path(tmp)


class ExperimentConfigTests(TempDirMixin, SimpleTestCase):

    def test_defaults_follow_the_protocol(self):
        config = ExperimentConfig()
        self.assertEqual(config.scenario, Scenario.GNSS)
        self.assertEqual(config.mode, RunMode.SCRIPTED)
        self.assertEqual(config.duration_s, 30.0)
        self.assertEqual(config.attack_start_s, 10.0)
        self.assertEqual(config.repetitions, 10)
        self.assertEqual(config.phase_window, PhaseWindow())

    def test_attack_must_start_before_the_end(self):
        with self.assertRaises(ImproperlyConfigured):
            ExperimentConfig.from_data({'attack_start_s': 30.0, 'duration_s': 30.0})

    def test_guard_band_needs_room(self):
        with self.assertRaises(ImproperlyConfigured):
            ExperimentConfig.from_data({'attack_start_s': 1.0})
        with self.assertRaises(ImproperlyConfigured):
            ExperimentConfig.from_data({'attack_start_s': 10.0, 'duration_s': 11.0})

    def test_repetitions_must_be_positive(self):
        with self.assertRaises(ImproperlyConfigured):
            ExperimentConfig.from_data({'repetitions': 0})

    def test_unknown_preset(self):
        with self.assertRaises(ImproperlyConfigured):
            ExperimentConfig.from_data({'preset': 'triple'})

    def test_script_outage_past_the_end(self):
        script = {'start_s': 10.0, 'outage_events': [{'start_s': 29.0, 'duration_s': 2.0}]}
        with self.assertRaises(ImproperlyConfigured):
            ExperimentConfig.from_data({'script': script})

    def test_load_applies_overrides(self):
        path = self.make_tmp() / 'experiment.json'
        path.write_text(json.dumps({'repetitions': 3, 'preset': 'double', 'flood': {'attacker_count': 2}}))
        config = ExperimentConfig.load(path, repetitions=5, seed=None)
        self.assertEqual(config.repetitions, 5)
        self.assertEqual(config.preset, 'double')
        self.assertEqual(config.seed, 0)
        self.assertEqual(config.flood.attacker_count, 2)

    def test_unreadable_config(self):
        path = self.make_tmp() / 'broken.json'
        path.write_text('{"repetitions": ')
        with self.assertRaises(ImproperlyConfigured):
            ExperimentConfig.load(path)
        with self.assertRaises(ImproperlyConfigured):
            ExperimentConfig.load(path.with_name('missing.json'))

    def test_config_hash(self):
        self.assertEqual(scripted_config().config_hash, scripted_config().config_hash)
        self.assertNotEqual(scripted_config().config_hash, scripted_config(seed=8).config_hash)
        self.assertEqual(len(scripted_config().config_hash), 64)

    def test_degradation_per_repetition(self):
        config = scripted_config(preset='double')
        self.assertEqual(config.degradation_for(3), config.degradation_for(3))
        self.assertEqual(config.degradation_for(0).drop_probability, 0.95)
        self.assertIsNone(scripted_config(preset='none').degradation_for(0))

    def test_explicit_script_wins(self):
        config = scripted_config(script={'start_s': 10.0, 'drop_probability': 0.25})
        self.assertEqual(config.degradation_for(0).drop_probability, 0.25)

    def test_flood_defaults_to_the_target_host(self):
        config = ExperimentConfig.from_data({'target': {'host': '10.0.0.5'}, 'flood': {'target_rate_pps': 500}})
        self.assertEqual(config.flood.target_address, '10.0.0.5')
        self.assertEqual(config.flood.target_rate_pps, 500)
        self.assertEqual(ExperimentConfig.from_data(config.as_dict()).flood.target_address, '10.0.0.5')

    def test_explicit_flood_target_is_kept(self):
        config = ExperimentConfig.from_data({
            'target': {'host': '10.0.0.5'}, 'flood': {'target_address': '10.0.0.9'},
        })
        self.assertEqual(config.flood.target_address, '10.0.0.9')
        config = ExperimentConfig(target={'host': '10.0.0.5'}, flood=FloodConfig(target_address='10.0.0.9'))
        self.assertEqual(config.flood.target_address, '10.0.0.9')

    def test_flood_follows_target_models_too(self):
        config = ExperimentConfig(target=TargetConfig(host='10.0.0.5'), flood=FloodConfig(target_rate_pps=500))
        self.assertEqual(config.flood.target_address, '10.0.0.5')
        self.assertEqual(config.flood.target_rate_pps, 500)


class SinglePresetExperimentTests(SimpleTestCase):
    """Ten scripted repetitions of the single-attacker configuration, shared by every test below."""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.out = Path(tempfile.mkdtemp())
        cls.report = run_gnss_experiment(scripted_config(repetitions=10, preset='single', seed=100), cls.out)

    @classmethod
    def tearDownClass(cls):
        shutil.rmtree(cls.out, ignore_errors=True)
        super().tearDownClass()

    def test_attack_rate_halves(self):
        pooled = self.report.pooled
        self.assertTrue(55.0 <= pooled['reference']['mean_sample_rate_hz'] <= 65.0, pooled['reference'])
        self.assertAlmostEqual(pooled['attack_to_reference_rate_ratio'], 0.5, delta=0.1)
        self.assertEqual(pooled['reference']['runs'], 10)

    def test_reference_increments_stay_below_twice_nominal(self):
        with open(self.out / 'plots' / 'increments_reference.csv', newline='') as f:
            increments = [float(row['increment_s']) for row in csv.DictReader(f)]
        self.assertGreater(len(increments), 4000)
        inside = sum(1 for d in increments if 0 < d < 2 * NOMINAL_INCREMENT_S + 0.001)
        self.assertGreaterEqual(inside / len(increments), 0.999)
        self.assertLessEqual(self.report.pooled['reference']['longest_increment_s'],
                             2 * NOMINAL_INCREMENT_S + 0.001)

    def test_output_layout(self):
        for k in range(10):
            self.assertTrue((self.out / f'run-{k}' / 'capture.anb').exists())
            meta = json.loads((self.out / f'run-{k}' / 'meta.json').read_text())
            self.assertEqual(meta['run_start_tow_s'], 345600.0)
        self.assertTrue((self.out / 'plots' / 'phase_rates.csv').exists())
        report = json.loads((self.out / 'report.json').read_text())
        self.assertEqual(report['runs_completed'], 10)
        self.assertEqual(report['provenance']['config_hash'], self.report.config_hash)

    def test_report_is_rederivable_from_captures(self):
        from timing_analysis.reports import analyze_capture
        from stream_codec.recorder import CaptureMeta
        capture = self.out / 'run-3' / 'capture.anb'
        meta = CaptureMeta.read(self.out / 'run-3' / 'meta.json')
        self.assertEqual(analyze_capture(capture, meta)['phases'], self.report.runs[3].metrics['phases'])


class GnssExperimentTests(TempDirMixin, SimpleTestCase):

    def test_double_preset_nearly_silences_the_device(self):
        report = run_gnss_experiment(scripted_config(repetitions=10, preset='double', seed=200), self.make_tmp())
        pooled = report.pooled
        self.assertTrue(55.0 <= pooled['reference']['mean_sample_rate_hz'] <= 65.0, pooled['reference'])
        self.assertAlmostEqual(pooled['attack_to_reference_rate_ratio'], 0.05, delta=0.03)
        self.assertGreaterEqual(pooled['attack']['longest_increment_s'], 1.0)

    def test_null_experiment(self):
        report = run_gnss_experiment(scripted_config(repetitions=1, preset='none'), self.make_tmp())
        self.assertAlmostEqual(report.pooled['attack_to_reference_rate_ratio'], 1.0, delta=0.1)

    def test_seeded_runs_are_reproducible(self):
        first, second = self.make_tmp(), self.make_tmp()
        run_gnss_experiment(scripted_config(), first)
        run_gnss_experiment(scripted_config(), second)
        for k in range(2):
            a, _ = decode_file(first / f'run-{k}' / 'capture.anb')
            b, _ = decode_file(second / f'run-{k}' / 'capture.anb')
            self.assertEqual(a, b)
        self.assertNotEqual(decode_file(first / 'run-0' / 'capture.anb')[0],
                            decode_file(first / 'run-1' / 'capture.anb')[0])

    def test_failed_capture_does_not_stop_the_experiment(self):
        calls = []

        def flaky_record(*args, **kwargs):
            calls.append(args)
            if len(calls) == 1:
                raise EndpointError("device refused the connection")
            return real_record(*args, **kwargs)

        finished = []
        with mock.patch('orchestrator.runner.record', side_effect=flaky_record):
            report = run_gnss_experiment(scripted_config(), self.make_tmp(), on_run=finished.append)
        self.assertEqual([r.status for r in report.runs], [RunStatus.FAILED, RunStatus.COMPLETED])
        self.assertIn('refused', report.runs[0].error_message)
        self.assertEqual(report.pooled['reference']['runs'], 1)
        self.assertEqual([r.index for r in finished], [0, 1])

    def test_all_runs_failing_is_an_experiment_error(self):
        out = self.make_tmp()
        with mock.patch('orchestrator.runner.record', side_effect=EndpointError("unreachable")):
            with self.assertRaises(ExperimentError):
                run_gnss_experiment(scripted_config(), out)
        report = json.loads((out / 'report.json').read_text())
        self.assertEqual(report['runs_failed'], 2)

    def test_scenario_mismatch(self):
        with self.assertRaises(ValueError):
            run_gnss_experiment(adstack_config(), self.make_tmp())

    def test_compare_presets(self):
        out = self.make_tmp()
        comparison = compare_presets(scripted_config(), ('single', 'double'), out)
        ratios = {p: c['attack_to_reference_rate_ratio'] for p, c in comparison['presets'].items()}
        self.assertGreater(ratios['single'], ratios['double'])
        self.assertTrue((out / 'comparison.json').exists())
        self.assertTrue((out / 'double' / 'report.json').exists())


class AdStackExperimentTests(TempDirMixin, SimpleTestCase):

    def test_smoke_run(self):
        out = self.make_tmp()
        report = run_adstack_experiment(adstack_config(), out)
        self.assertEqual([(r.phase, r.metrics['records']) for r in report.runs], [('reference', 100), ('attack', 100)])
        self.assertEqual(report.pooled['reference']['count'], 100)
        self.assertEqual(report.pooled['attack']['count'], 100)
        self.assertEqual(report.pooled['paired_runs']['pairs'], 1)
        self.assertGreater(report.runs[1].flood_stats['packets_sent'], 0)
        self.assertTrue((out / 'run-0' / 'latency_attack.csv').exists())
        self.assertTrue((out / 'plots' / 'latency_histogram_reference.csv').exists())

    def test_privilege_failure_falls_back_to_udp(self):
        notes = []
        config = FloodConfig(transport_mode=TransportMode.RAW_ICMP)
        with mock.patch('orchestrator.runner.open_sender_socket', side_effect=PrivilegeError('raw-icmp')):
            resolved = resolve_transport(config, notes)
        self.assertEqual(resolved.transport_mode, TransportMode.UDP_FALLBACK)
        self.assertEqual(len(notes), 1)
        self.assertIn('udp-fallback', notes[0])

    def test_udp_mode_skips_privilege_check(self):
        notes = []
        config = FloodConfig(transport_mode=TransportMode.UDP_FALLBACK)
        with mock.patch('orchestrator.runner.open_sender_socket') as opener:
            self.assertIs(resolve_transport(config, notes), config)
        opener.assert_not_called()
        self.assertEqual(notes, [])

    def test_several_attackers_are_noted(self):
        notes = []
        config = FloodConfig(transport_mode=TransportMode.UDP_FALLBACK, attacker_count=2)
        resolve_transport(config, notes)
        self.assertEqual(len(notes), 1)
        self.assertIn('2 attackers', notes[0])

    def test_flood_raises_latency_in_most_pairs(self):
        config = adstack_config(
            repetitions=10,
            target={'iterations': 300, 'solver_iterations': 10},
            flood={'target_rate_pps': 100_000, 'attacker_count': 2, 'transport_mode': 'udp-fallback'},
        )
        report = run_adstack_experiment(config, self.make_tmp())
        paired = report.pooled['paired_runs']
        self.assertEqual(paired['pairs'], 10)
        self.assertGreaterEqual(paired['attack_median_not_lower'], 8)
        self.assertGreaterEqual(paired['attack_p99_not_lower'], 8)
        self.assertGreaterEqual(report.pooled['attack']['median_s'], report.pooled['reference']['median_s'])


class LiveGnssExperimentTests(TempDirMixin, SimpleTestCase):

    def test_capture_under_flood_from_a_loopback_device(self):
        stop = threading.Event()
        thread, port, device = serve_in_thread(duration_s=9.0, seed=11, wait_for_client=True, stop_event=stop)
        self.addCleanup(thread.join, 5)
        self.addCleanup(stop.set)
        self.assertIsNotNone(port, device.get('error'))
        config = ExperimentConfig.from_data({
            'name': 'live', 'mode': 'live', 'repetitions': 1, 'duration_s': 7.0, 'attack_start_s': 3.0,
            'target': {'host': '127.0.0.1', 'port': port},
            'flood': {'target_rate_pps': 2000, 'transport_mode': 'udp-fallback'},
        })

        report = run_gnss_experiment(config, self.make_tmp())

        run = report.runs[0]
        self.assertEqual(run.status, RunStatus.COMPLETED, run.error_message)
        self.assertIsNone(run.seed)
        self.assertGreater(run.metrics['samples'], 0)
        self.assertEqual(run.metrics['phase_window'], config.phase_window.as_dict())
        self.assertGreater(run.flood_stats['packets_sent'], 0)
        self.assertEqual(run.flood_stats['send_errors'], 0)
        # flood runs from the attack start to the end of the capture
        self.assertAlmostEqual(run.flood_stats['wall_duration_s'], 4.0, delta=1.0)

        stop.set()
        thread.join(5)
        # phases are measured from the capture's connect, which is when the device run starts
        self.assertAlmostEqual(run.metrics['t0_tow_s'], device['summary'].start_tow_s, delta=0.5)
        reference = run.metrics['phases']['reference']['mean_sample_rate_hz']
        attack = run.metrics['phases']['attack']['mean_sample_rate_hz']
        self.assertAlmostEqual(reference, 64, delta=16)
        self.assertAlmostEqual(attack, 64, delta=16)


class ExperimentTaskTests(TempDirMixin, TestCase):

    def test_runs_a_stored_experiment(self):
        experiment = Experiment.from_config(scripted_config(preset='single'), self.make_tmp())
        result = run_experiment_task.apply(args=[experiment.pk]).get()
        experiment.refresh_from_db()
        self.assertTrue(result['success'])
        self.assertEqual(experiment.status, 'completed')
        self.assertEqual(experiment.runs.filter(status='completed').count(), 2)
        self.assertEqual(experiment.report['runs_completed'], 2)
        self.assertIsNotNone(experiment.finished_at)

    def test_all_runs_failing_marks_the_experiment(self):
        experiment = Experiment.from_config(scripted_config(), self.make_tmp())
        with mock.patch('orchestrator.runner.record', side_effect=EndpointError("unreachable")):
            result = run_experiment_task.apply(args=[experiment.pk]).get()
        experiment.refresh_from_db()
        self.assertFalse(result['success'])
        self.assertEqual(experiment.status, 'failed')
        self.assertEqual(experiment.runs.filter(status='failed').count(), 2)

    def test_invalid_stored_config(self):
        experiment = Experiment.objects.create(
            name='broken', scenario='gnss', mode='scripted', config={'repetitions': 0}, config_hash='x' * 64,
        )
        result = run_experiment_task.apply(args=[experiment.pk]).get()
        experiment.refresh_from_db()
        self.assertFalse(result['success'])
        self.assertEqual(experiment.status, 'failed')
        self.assertIn('repetitions', experiment.error_message)

    def test_missing_experiment(self):
        self.assertEqual(run_experiment_task.apply(args=[987654]).get()['error'], 'Experiment not found')


class ProgressSignalTests(TestCase):

    def setUp(self):
        self.experiment = Experiment.from_config(scripted_config())
        self.layer = mock.Mock()
        self.layer.group_send = mock.AsyncMock()
        patcher = mock.patch('orchestrator.signals.get_channel_layer', return_value=self.layer)
        patcher.start()
        self.addCleanup(patcher.stop)

    def test_new_run_is_announced(self):
        ExperimentRun.objects.create(
            experiment=self.experiment, index=0, status='completed',
            metrics={'phases': {'reference': {'mean_sample_rate_hz': 62.0}, 'attack': {'mean_sample_rate_hz': 31.0}}},
        )
        group, event = self.layer.group_send.await_args.args
        self.assertEqual(group, f"experiment_{self.experiment.pk}")
        self.assertEqual(event['type'], 'progress_update')
        self.assertEqual(event['data']['attack_rate_hz'], 31.0)

    def test_status_change_is_announced(self):
        self.experiment.status = 'running'
        self.experiment.save(update_fields=['status'])
        _, event = self.layer.group_send.await_args.args
        self.assertEqual(event['data'], {
            'type': 'experiment_status', 'experiment_id': self.experiment.pk, 'status': 'running', 'error': '',
        })

    def test_unrelated_update_is_quiet(self):
        self.experiment.notes = ['x']
        self.experiment.save(update_fields=['notes'])
        self.layer.group_send.assert_not_awaited()


class ProgressConsumerTests(TransactionTestCase):

    def communicator(self, experiment_id):
        return WebsocketCommunicator(URLRouter(websocket_urlpatterns), f"/ws/experiments/{experiment_id}/")

    async def test_forwards_run_updates(self):
        experiment = await database_sync_to_async(Experiment.from_config)(scripted_config())
        communicator = self.communicator(experiment.pk)
        connected, _ = await communicator.connect()
        self.assertTrue(connected)
        hello = await communicator.receive_json_from()
        self.assertEqual(hello['type'], 'connection_established')
        self.assertEqual(hello['repetitions'], 2)

        await database_sync_to_async(ExperimentRun.objects.create)(
            experiment=experiment, index=0, status='failed', error_message='refused',
        )
        update = await communicator.receive_json_from(timeout=5)
        self.assertEqual(update['type'], 'run_finished')
        self.assertEqual(update['status'], 'failed')
        self.assertEqual(update['error'], 'refused')
        await communicator.disconnect()

    async def test_unknown_experiment_is_rejected(self):
        connected, _ = await self.communicator(424242).connect()
        self.assertFalse(connected)

    async def test_feed_is_read_only(self):
        experiment = await database_sync_to_async(Experiment.from_config)(scripted_config())
        communicator = self.communicator(experiment.pk)
        await communicator.connect()
        await communicator.receive_json_from()
        await communicator.send_to(text_data='{"cmd": "stop"}')
        reply = await communicator.receive_json_from()
        self.assertEqual(reply['type'], 'error')
        await communicator.disconnect()


class RunCommandTests(TempDirMixin, SimpleTestCase):

    def test_scripted_run(self):
        tmp = self.make_tmp()
        config = tmp / 'experiment.json'
        config.write_text(json.dumps({
            'name': 'cli', 'time_scale': 60.0, 'target': {'host': '127.0.0.1', 'port': 0},
        }))
        out = tmp / 'out'
        stdout = StringIO()
        call_command('run', '--config', str(config), '--scripted', '--out', str(out), '--repetitions', '1',
                     '--preset', 'single', stdout=stdout)
        report = json.loads((out / 'report.json').read_text())
        self.assertEqual(report['config']['repetitions'], 1)
        self.assertEqual(report['config']['preset'], 'single')
        self.assertEqual(report['runs_completed'], 1)
        self.assertIn('Report written', stdout.getvalue())

    def test_invalid_override(self):
        with self.assertRaises(CommandError):
            call_command('run', '--repetitions', '0', stdout=StringIO())
