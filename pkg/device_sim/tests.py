import json
import socket
import tempfile
import threading
from pathlib import Path

import numpy as np
from django.core.exceptions import ImproperlyConfigured
from django.test import SimpleTestCase
from pydantic import ValidationError

from main.exceptions import EndpointError
from stream_codec.codec import decode_stream
from timing_analysis.metrics import double_differences_us
from timing_analysis.series import TimingSeries
from .degradation import DegradationScript, OutageEvent, preset_script, simulate_run
from .samples import (
    SECONDS_PER_WEEK, FixStatus, LatencyModel, LocalPoint, NoiseModel, generate_sample, gps_tow_from_unix,
)
from .schedule import MEDIUM_RATE_BAND_HZ, SamplingSchedule, next_sample_time, sample_times
from .server import stream


def serve_in_thread(**kwargs):
    """Run stream() on an ephemeral port; returns (thread, port, result dict)."""
    ready = threading.Event()
    bound = {}
    result = {}

    def on_listening(port):
        bound['port'] = port
        ready.set()

    def target():
        try:
            result['summary'] = stream(('127.0.0.1', 0), on_listening=on_listening, **kwargs)
        except Exception as e:
            result['error'] = e
            ready.set()

    thread = threading.Thread(target=target, daemon=True)
    thread.start()
    ready.wait(5)
    return thread, bound.get('port'), result


def read_until_close(port, timeout=10.0):
    chunks = []
    with socket.create_connection(('127.0.0.1', port), timeout=timeout) as sock:
        while True:
            chunk = sock.recv(65536)
            if not chunk:
                break
            chunks.append(chunk)
    return b''.join(chunks)


class SamplingScheduleTests(SimpleTestCase):

    def test_no_merge_window_gives_uniform_sampling(self):
        schedule = SamplingSchedule(merge_window_s=0.0)
        times = sample_times(schedule, np.random.default_rng(0), 5.0)
        np.testing.assert_allclose(np.diff(times), 1 / schedule.imu_rate_hz, atol=1e-9)

    def test_default_increments_stay_below_twice_nominal(self):
        schedule = SamplingSchedule()
        rng = np.random.default_rng(1)
        t = 0.0
        times = []
        for _ in range(10_000):
            t = next_sample_time(schedule, rng, t)
            times.append(t)
        increments = np.diff(times)
        self.assertGreater(increments.min(), 0.0)
        self.assertLess(increments.max(), 2 * schedule.nominal_increment_s + 0.001)
        rate = (len(times) - 1) / (times[-1] - times[0])
        self.assertTrue(55.0 <= rate <= 65.0, rate)

    def test_default_imu_rate_keeps_the_measured_rate_inside_the_band(self):
        schedule = SamplingSchedule()
        self.assertEqual(schedule.imu_rate_hz, 64.0)
        for seed in range(5):
            times = sample_times(schedule, np.random.default_rng(seed), 30.0)
            rate = (len(times) - 1) / (times[-1] - times[0])
            self.assertLess(rate, MEDIUM_RATE_BAND_HZ[1])
            self.assertGreater(rate, MEDIUM_RATE_BAND_HZ[0])

    def test_fusion_produces_nonuniform_increments(self):
        times = sample_times(SamplingSchedule(), np.random.default_rng(2), 10.0)
        increments = np.diff(times)
        self.assertGreater(increments.max() - increments.min(), 0.005)

    def test_same_seed_same_epochs(self):
        schedule = SamplingSchedule(spike_probability=0.05)
        first = sample_times(schedule, np.random.default_rng(42), 10.0)
        second = sample_times(schedule, np.random.default_rng(42), 10.0)
        np.testing.assert_array_equal(first, second)

    def test_spike_knob_skips_epochs(self):
        schedule = SamplingSchedule(spike_probability=0.2, spike_max_epochs=4)
        increments = np.diff(sample_times(schedule, np.random.default_rng(3), 10.0))
        self.assertGreater(increments.max(), 2 * schedule.nominal_increment_s)

    def test_merge_window_must_fit_in_imu_period(self):
        with self.assertRaises(ValidationError):
            SamplingSchedule(merge_window_s=0.02)

    def test_nominal_rate_band(self):
        with self.assertRaises(ValidationError):
            SamplingSchedule(nominal_rate_hz=100.0)
        self.assertEqual(SamplingSchedule(nominal_rate_hz=58.0).imu_rate_hz, 58.0)

    def test_negative_previous_time(self):
        with self.assertRaises(ValueError):
            next_sample_time(SamplingSchedule(), np.random.default_rng(), -1.0)


class SolutionSampleTests(SimpleTestCase):

    def test_zero_noise_at_origin(self):
        sample = generate_sample(100.0, LocalPoint(), np.random.default_rng(0),
                                 noise_model=NoiseModel(horizontal_std_m=0.0, vertical_std_m=0.0))
        self.assertEqual((sample.east_mm, sample.north_mm, sample.up_mm), (0, 0, 0))
        self.assertEqual(sample.tow_us, 100_000_000)
        self.assertEqual(sample.fix_status, FixStatus.FIXED)

    def test_constant_latency_is_visible_in_sys_time(self):
        run = simulate_run(SamplingSchedule(), 5.0, seed=1, latency=LatencyModel.constant(0.030), clock_offset_s=0.0)
        self.assertTrue(all(s.sys_time_us - s.tow_us == 30_000 for s in run.samples))

    def test_stationary_scatter(self):
        run = simulate_run(SamplingSchedule(), 30.0, seed=4)
        east = np.array([s.east_mm for s in run.samples]) / 1000
        north = np.array([s.north_mm for s in run.samples]) / 1000
        self.assertLessEqual(east.std(), 0.05)
        self.assertLessEqual(north.std(), 0.05)

    def test_tow_outside_week(self):
        with self.assertRaises(ValueError):
            generate_sample(SECONDS_PER_WEEK + 1, LocalPoint(), np.random.default_rng())

    def test_gps_time_of_week(self):
        # 2024-01-07T00:00:00Z is a Sunday, the start of a GPS week in UTC terms
        self.assertAlmostEqual(gps_tow_from_unix(1704585600), 18.0)
        self.assertAlmostEqual(gps_tow_from_unix(315964800), 18.0)
        self.assertAlmostEqual(gps_tow_from_unix(1704585600 + 3600.5), 3618.5)


class SimulatedRunTests(SimpleTestCase):

    def test_sample_invariants(self):
        run = simulate_run(SamplingSchedule(), 30.0, seed=7, script=preset_script('double', rng=7))
        tows = [s.tow_us for s in run.samples]
        systimes = [s.sys_time_us for s in run.samples]
        self.assertTrue(all(a < b for a, b in zip(tows, tows[1:])))
        self.assertTrue(all(a <= b for a, b in zip(systimes, systimes[1:])))
        self.assertTrue(all(t < SECONDS_PER_WEEK * 1_000_000 for t in tows))
        self.assertEqual(run.generated, run.emitted + run.dropped + run.suppressed)

    def test_nominal_rate(self):
        run = simulate_run(SamplingSchedule(), 30.0, seed=8)
        tows = np.array([s.tow_us for s in run.samples]) / 1e6
        rate = (len(tows) - 1) / (tows[-1] - tows[0])
        self.assertTrue(55.0 <= rate <= 65.0, rate)

    def test_drops_never_move_timestamps(self):
        run = simulate_run(SamplingSchedule(), 30.0, seed=9, script=preset_script('single'))
        timeline = {s.tow_us: s for s in run.timeline}
        for sample in run.samples:
            self.assertEqual(timeline[sample.tow_us], sample)

    def test_reference_phase_unaffected_by_script(self):
        clean = simulate_run(SamplingSchedule(), 30.0, seed=10)
        script = DegradationScript(start_s=10.0, drop_probability=0.9, extra_latency_mean_s=0.2,
                                   extra_latency_spread_s=0.1)
        attacked = simulate_run(SamplingSchedule(), 30.0, seed=10, script=script)
        cutoff = clean.start_tow_s * 1_000_000 + 10_000_000
        self.assertEqual(
            [s for s in clean.samples if s.tow_us < cutoff],
            [s for s in attacked.samples if s.tow_us < cutoff],
        )

    def test_single_preset_halves_attack_rate(self):
        run = simulate_run(SamplingSchedule(), 30.0, seed=11, script=preset_script('single'))
        t = np.array([s.tow_us for s in run.samples]) / 1e6 - run.start_tow_s
        reference = np.count_nonzero(t < 8.0) / 8.0
        attack = np.count_nonzero(t >= 12.0) / 18.0
        self.assertAlmostEqual(attack / reference, 0.5, delta=0.1)

    def test_long_outage_shows_as_tow_gap(self):
        script = DegradationScript(start_s=10.0, drop_probability=0.95,
                                   outage_events=(OutageEvent(start_s=15.0, duration_s=2.0),))
        run = simulate_run(SamplingSchedule(), 30.0, seed=12, script=script)
        t = np.array([s.tow_us for s in run.samples]) / 1e6 - run.start_tow_s
        attack = t[t >= 12.0]
        self.assertGreaterEqual(np.diff(attack).max(), 2.0)

    def test_outages_drop_samples_without_delaying_the_rest(self):
        script = DegradationScript(start_s=10.0, outage_events=(
            OutageEvent(start_s=14.0, duration_s=2.5), OutageEvent(start_s=22.0, duration_s=1.5),
        ))
        clean = simulate_run(SamplingSchedule(), 30.0, seed=14)
        degraded = simulate_run(SamplingSchedule(), 30.0, seed=14, script=script)
        self.assertEqual(degraded.dropped, 0)
        self.assertGreater(degraded.suppressed, 0)

        clean_emit = {s.tow_us: offset for s, offset in zip(clean.samples, clean.emit_offsets_s)}
        clean_samples = {s.tow_us: s for s in clean.samples}
        for sample, offset in zip(degraded.samples, degraded.emit_offsets_s):
            self.assertEqual(clean_samples[sample.tow_us], sample)
            self.assertEqual(clean_emit[sample.tow_us], offset)

        def jitter_p99(run):
            dd = double_differences_us(TimingSeries.from_samples(run.samples))
            return np.percentile(np.abs(dd), 99)

        self.assertLessEqual(jitter_p99(degraded), jitter_p99(clean) * 1.1)

    def test_week_rollover_wraps_tow(self):
        run = simulate_run(SamplingSchedule(), 2.0, seed=13, start_tow_s=SECONDS_PER_WEEK - 1.0)
        tows = [s.tow_us for s in run.samples]
        self.assertLess(max(tows), SECONDS_PER_WEEK * 1_000_000)
        self.assertLess(tows[-1], tows[0])


class DegradationScriptTests(SimpleTestCase):

    def test_overlapping_outages_rejected(self):
        with self.assertRaises(ValidationError):
            DegradationScript(outage_events=(
                OutageEvent(start_s=12.0, duration_s=3.0), OutageEvent(start_s=14.0, duration_s=1.0),
            ))

    def test_outage_past_run_end(self):
        script = DegradationScript(outage_events=(OutageEvent(start_s=29.0, duration_s=3.0),))
        with self.assertRaises(ImproperlyConfigured):
            simulate_run(SamplingSchedule(), 30.0, seed=0, script=script)

    def test_double_preset_outages(self):
        for seed in range(20):
            script = preset_script('double', 30.0, 10.0, seed)
            self.assertEqual(script.drop_probability, 0.95)
            self.assertEqual(len(script.outage_events), 2)
            first, second = sorted(script.outage_events, key=lambda e: e.start_s)
            for event in (first, second):
                self.assertTrue(1.0 <= event.duration_s <= 3.0)
                self.assertGreaterEqual(event.start_s, 12.0)
                self.assertLessEqual(event.end_s, 30.0)
            self.assertLessEqual(first.end_s, second.start_s)

    def test_presets(self):
        self.assertIsNone(preset_script('none'))
        self.assertEqual(preset_script('single').drop_probability, 0.5)
        with self.assertRaises(ValueError):
            preset_script('triple')

    def test_from_json(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'script.json'
            path.write_text(json.dumps({
                'start_s': 10, 'drop_probability': 0.95,
                'outage_events': [{'start_s': 14, 'duration_s': 2}],
            }))
            script = DegradationScript.from_json(path)
            self.assertEqual(script.outage_events[0].end_s, 16.0)

            path.write_text(json.dumps({'drop_probability': 1.5}))
            with self.assertRaises(ImproperlyConfigured):
                DegradationScript.from_json(path)


class StreamServerTests(SimpleTestCase):

    def test_client_receives_every_emitted_sample(self):
        thread, port, result = serve_in_thread(duration_s=3.0, seed=5, time_scale=10.0, wait_for_client=True,
                                               start_tow_s=1000.0)
        data = read_until_close(port)
        thread.join(10)
        summary = result['summary']
        samples, diagnostics = decode_stream(data)
        self.assertEqual(len(samples), summary.samples_emitted)
        self.assertEqual(diagnostics.bytes_skipped, 0)
        self.assertEqual(summary.clients_served, 1)
        self.assertEqual(summary.queue_overflows, 0)
        self.assertEqual(samples[0].tow_us // 1_000_000, 1000)

    def test_scripted_stream_applies_degradation(self):
        script = DegradationScript(start_s=1.0, drop_probability=1.0)
        thread, port, result = serve_in_thread(duration_s=3.0, seed=5, time_scale=10.0, wait_for_client=True,
                                               script=script)
        samples, _ = decode_stream(read_until_close(port))
        thread.join(10)
        self.assertTrue(samples)
        relative = [s.tow_s - result['summary'].start_tow_s for s in samples]
        self.assertLess(max(relative), 1.0)
        self.assertGreater(result['summary'].samples_dropped, 0)

    def test_disconnecting_client_does_not_stop_the_run(self):
        thread, port, result = serve_in_thread(duration_s=2.0, seed=6, time_scale=4.0, wait_for_client=True)
        socket.create_connection(('127.0.0.1', port)).close()
        data = read_until_close(port)
        thread.join(10)
        self.assertNotIn('error', result)
        self.assertEqual(result['summary'].clients_served, 2)
        self.assertTrue(decode_stream(data)[0])

    def test_stop_event_ends_run(self):
        stop = threading.Event()
        thread, port, result = serve_in_thread(duration_s=600.0, wait_for_client=True, stop_event=stop)
        threading.Timer(0.3, stop.set).start()
        thread.join(10)
        self.assertFalse(thread.is_alive())
        self.assertTrue(result['summary'].stopped_early)

    def test_port_in_use(self):
        with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as holder:
            holder.bind(('127.0.0.1', 0))
            holder.listen()
            with self.assertRaises(EndpointError):
                stream(('127.0.0.1', holder.getsockname()[1]), duration_s=1.0)
