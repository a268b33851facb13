import csv
import json
import random
import tempfile
import time
from pathlib import Path

import numpy as np
from django.core.management import call_command
from django.test import SimpleTestCase

from control_workload.benchmark import LatencyLogWriter, LatencyRecord
from device_sim.degradation import preset_script, simulate_run
from device_sim.samples import FixStatus, SolutionSample
from device_sim.schedule import SamplingSchedule
from main.exceptions import TowWraparoundError, UndefinedMetricError
from stream_codec.codec import encode
from stream_codec.recorder import CaptureMeta, meta_path_for
from .metrics import (
    double_difference_jitter, latency_summary, longest_increment, mean_sample_rate, pooled_double_difference_jitter,
    pooled_longest_increment, pooled_mean_sample_rate, position_plausibility, sample_increments,
)
from .reports import analyze_capture, analyze_samples, write_plot_data
from .series import Phase, PhaseWindow, TimingSeries, extract_phase

START_TOW_S = 345600.0


def linear_quantile(sorted_values, q):
    """Order-statistic interpolation, written out by hand."""
    position = (len(sorted_values) - 1) * q
    i = int(position)
    frac = position - i
    if frac == 0:
        return sorted_values[i]
    return sorted_values[i] * (1 - frac) + sorted_values[min(i + 1, len(sorted_values) - 1)] * frac


def brute_force_jitter(tow, sys, q_lo=0.05, q_hi=0.95):
    dd = sorted((tow[i] - tow[i + 1] + sys[i + 1] - sys[i]) / 1e6 for i in range(len(tow) - 1))
    return linear_quantile(dd, q_hi) - linear_quantile(dd, q_lo)


def uniform_series(n, step_us, latency_us=0, start_us=0):
    tow = start_us + step_us * np.arange(n, dtype=np.int64)
    return TimingSeries(tow, tow + latency_us)


def latency_records(durations_us):
    records = []
    t = 0
    for i, d in enumerate(durations_us):
        records.append(LatencyRecord(i, t, t + d))
        t += d + 100
    return records


class PhaseWindowTests(SimpleTestCase):

    def setUp(self):
        t0 = START_TOW_S
        self.series = TimingSeries.from_seconds(t0 + np.arange(0, 30.01, 0.5), t0 + np.arange(0, 30.01, 0.5) + 0.02)

    def test_reference_boundaries(self):
        reference = extract_phase(self.series, PhaseWindow(), Phase.REFERENCE, START_TOW_S)
        relative = reference.tow - START_TOW_S
        self.assertEqual(len(reference), 16)
        self.assertAlmostEqual(relative[0], 0.0)
        self.assertAlmostEqual(relative[-1], 7.5)

    def test_attack_is_closed_interval(self):
        attack = extract_phase(self.series, PhaseWindow(), 'attack', START_TOW_S)
        relative = attack.tow - START_TOW_S
        self.assertEqual(len(attack), 37)
        self.assertAlmostEqual(relative[0], 12.0)
        self.assertAlmostEqual(relative[-1], 30.0)

    def test_gap_is_never_selected(self):
        for phase in Phase:
            relative = extract_phase(self.series, PhaseWindow(), phase, START_TOW_S).tow - START_TOW_S
            self.assertFalse(np.any((relative >= 8.0) & (relative < 12.0)))

    def test_total_outage_gives_empty_attack_phase(self):
        keep = self.series.tow - START_TOW_S < 12.0
        attack = extract_phase(self.series.subset(keep), PhaseWindow(), Phase.ATTACK, START_TOW_S)
        self.assertEqual(len(attack), 0)
        with self.assertRaises(UndefinedMetricError):
            mean_sample_rate(attack)

    def test_from_attack_start(self):
        window = PhaseWindow.from_attack_start(10.0, 30.0)
        self.assertEqual(window, PhaseWindow())

    def test_overlapping_windows_rejected(self):
        with self.assertRaises(ValueError):
            PhaseWindow(reference=(0.0, 9.0), gap=(8.0, 12.0))


class TimingSeriesTests(SimpleTestCase):

    def test_lengths_must_match(self):
        with self.assertRaises(ValueError):
            TimingSeries([1, 2, 3], [1, 2])

    def test_tow_must_increase(self):
        with self.assertRaises(ValueError):
            TimingSeries([1, 3, 3], [1, 2, 3])

    def test_week_wraparound_is_a_distinct_error(self):
        week_us = 604800 * 10**6
        with self.assertRaises(TowWraparoundError):
            TimingSeries([week_us - 10_000, week_us - 5_000, 2_000], [0, 1, 2])

    def test_from_samples(self):
        samples = [SolutionSample(10, 15, 0, 0, 0), SolutionSample(20, 31, 0, 0, 0)]
        series = TimingSeries.from_samples(samples)
        np.testing.assert_array_equal(series.tow_us, [10, 20])
        np.testing.assert_array_equal(series.sys_us, [15, 31])

    def test_run_relative(self):
        series = uniform_series(3, 1_000_000, start_us=5_000_000).run_relative(5.0)
        np.testing.assert_array_equal(series.tow_us, [0, 1_000_000, 2_000_000])


class RateAndIncrementTests(SimpleTestCase):

    def test_sixty_hertz(self):
        series = TimingSeries.from_seconds(np.linspace(0, 1, 61), np.linspace(0, 1, 61))
        self.assertAlmostEqual(mean_sample_rate(series), 60.0, places=6)

    def test_uniform_longest_increment(self):
        series = TimingSeries.from_seconds(np.arange(600) / 60, np.arange(600) / 60)
        self.assertAlmostEqual(longest_increment(series), 1 / 60, places=5)

    def test_injected_gap(self):
        tow = np.concatenate([np.arange(100) * 0.01, 0.99 + 2.5 + np.arange(100) * 0.01])
        series = TimingSeries.from_seconds(tow, tow)
        self.assertAlmostEqual(longest_increment(series), 2.5, places=6)
        self.assertAlmostEqual(sample_increments(series).max(), 2.5, places=6)

    def test_undefined_for_short_series(self):
        single = TimingSeries([1], [1])
        for metric in (mean_sample_rate, longest_increment, double_difference_jitter):
            with self.assertRaises(UndefinedMetricError):
                metric(single)
        with self.assertRaises(UndefinedMetricError):
            double_difference_jitter(TimingSeries([1, 2], [1, 2]))

    def test_bernoulli_drops_scale_the_rate(self):
        rng = np.random.default_rng(3)
        series = uniform_series(10_000, 10_000)
        for p in (0.3, 0.5, 0.95):
            survivors = series.subset(rng.random(len(series)) >= p)
            self.assertAlmostEqual(mean_sample_rate(survivors) / 100.0, 1 - p, delta=0.05 * (1 - p) + 0.005)


class DoubleDifferenceJitterTests(SimpleTestCase):

    def test_constant_latency_is_exactly_zero(self):
        rng = np.random.default_rng(0)
        tow = np.cumsum(rng.integers(1_000, 30_000, 5_000))
        self.assertEqual(double_difference_jitter(TimingSeries(tow, tow + 123_456)), 0.0)

    def test_offsets_leave_jitter_unchanged(self):
        rng = np.random.default_rng(1)
        tow = 10**9 + np.cumsum(rng.integers(1_000, 30_000, 2_000))
        sys = tow + rng.integers(0, 50_000, 2_000)
        base = double_difference_jitter(TimingSeries(tow, sys))
        self.assertEqual(double_difference_jitter(TimingSeries(tow, sys + 777_777_777)), base)
        self.assertEqual(double_difference_jitter(TimingSeries(tow + 5_000_000, sys)), base)

    def test_alternating_latency(self):
        tow = 10_000 * np.arange(2_000, dtype=np.int64)
        latency = np.where(np.arange(2_000) % 2 == 0, 0, 5_000)
        jitter = double_difference_jitter(TimingSeries(tow, tow + latency))
        self.assertAlmostEqual(jitter, 0.010, delta=0.0001)

    def test_matches_brute_force_oracle(self):
        rng = random.Random(2024)
        elapsed = 0.0
        for _ in range(100):
            tow, sys = [], []
            t = rng.randrange(10**9)
            for _ in range(10_000):
                t += rng.randint(1, 40_000)
                tow.append(t)
                sys.append(t + rng.randint(0, 200_000))
            expected = brute_force_jitter(tow, sys)
            started = time.monotonic()
            jitter = double_difference_jitter(TimingSeries(tow, sys))
            elapsed += time.monotonic() - started
            self.assertAlmostEqual(jitter, expected, delta=1e-9)
        self.assertLess(elapsed, 10.0)

    def test_drops_are_not_jitter(self):
        rng = np.random.default_rng(4)
        series = uniform_series(5_000, 15_625, latency_us=20_000)
        survivors = series.subset(rng.random(len(series)) >= 0.9)
        self.assertEqual(double_difference_jitter(survivors), 0.0)

    def test_quantile_order(self):
        rng = np.random.default_rng(5)
        tow = np.cumsum(rng.integers(1, 20_000, 500))
        series = TimingSeries(tow, tow + rng.integers(0, 100_000, 500))
        self.assertGreaterEqual(double_difference_jitter(series), 0.0)
        self.assertGreaterEqual(double_difference_jitter(series, 0.01, 0.99), double_difference_jitter(series))


class PooledMetricTests(SimpleTestCase):

    def test_runs_are_never_bridged(self):
        first = uniform_series(61, 16_667, latency_us=10_000)
        second = uniform_series(61, 16_667, latency_us=90_000, start_us=100_000_000)
        segments = [first, second]
        self.assertAlmostEqual(pooled_mean_sample_rate(segments), mean_sample_rate(first))
        self.assertAlmostEqual(pooled_longest_increment(segments), 0.016667)
        self.assertEqual(pooled_double_difference_jitter(segments), 0.0)

    def test_pooled_rate_weights_by_span(self):
        slow = uniform_series(11, 100_000)   # 10 Hz over 1 s
        fast = uniform_series(301, 10_000)   # 100 Hz over 3 s
        self.assertAlmostEqual(pooled_mean_sample_rate([slow, fast]), 310 / 4.0)

    def test_empty_segments(self):
        with self.assertRaises(UndefinedMetricError):
            pooled_mean_sample_rate([TimingSeries.empty(), TimingSeries([1], [1])])
        with self.assertRaises(UndefinedMetricError):
            pooled_double_difference_jitter([])


class LatencySummaryTests(SimpleTestCase):

    def test_identical_durations(self):
        summary = latency_summary(latency_records([7_000] * 500))
        self.assertAlmostEqual(summary.median_s, 0.007)
        self.assertAlmostEqual(summary.std_s, 0.0, places=12)
        self.assertAlmostEqual(summary.lower99_width_s, 0.0, places=12)
        self.assertEqual(sum(summary.histogram_counts), 500)

    def test_uniform_durations(self):
        summary = latency_summary(latency_records([ms * 1000 for ms in range(1, 101)]))
        self.assertAlmostEqual(summary.median_s, 0.0505)
        self.assertAlmostEqual(summary.min_s, 0.001)
        self.assertAlmostEqual(summary.max_s, 0.100)
        self.assertAlmostEqual(summary.lower99_width_s, 0.09901 - 0.001, places=9)
        self.assertTrue(summary.min_s <= summary.median_s <= summary.max_s)

    def test_empty(self):
        with self.assertRaises(UndefinedMetricError):
            latency_summary([])

    def test_serializes_without_histogram(self):
        data = latency_summary(latency_records([5_000, 6_000])).as_dict(include_histogram=False)
        self.assertNotIn('histogram', data)
        json.dumps(data)


class PositionPlausibilityTests(SimpleTestCase):

    def test_stationary_run_is_plausible(self):
        run = simulate_run(SamplingSchedule(), 30.0, seed=1)
        screen = position_plausibility(run.samples)
        self.assertTrue(screen.plausible)
        self.assertLess(screen.horizontal_std_m, 0.05)
        self.assertEqual(screen.fixed_share, 1.0)

    def test_jump_is_flagged(self):
        samples = [SolutionSample(i, i, 0, 0, 0) for i in range(10)]
        samples.append(SolutionSample(10, 10, 800, 0, 0, FixStatus.FLOAT))
        screen = position_plausibility(samples)
        self.assertFalse(screen.plausible)
        self.assertAlmostEqual(screen.max_horizontal_excursion_m, 0.8)
        self.assertAlmostEqual(screen.fixed_share, 10 / 11)


class CaptureAnalysisTests(SimpleTestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.dir = Path(self.tmp.name)

    def write_capture(self, run):
        capture = self.dir / 'capture.anb'
        capture.write_bytes(b''.join(encode(s) for s in run.samples))
        meta = CaptureMeta(capture_start_unix=time.time(), endpoint='127.0.0.1:6001', duration_s=30.0,
                           bytes_captured=capture.stat().st_size, run_start_tow_s=run.start_tow_s)
        meta.write(meta_path_for(capture))
        return capture, meta

    def test_single_preset_capture(self):
        run = simulate_run(SamplingSchedule(), 30.0, seed=21, script=preset_script('single'))
        capture, meta = self.write_capture(run)
        report = analyze_capture(capture, meta, attack_at=10.0)
        reference = report['phases']['reference']['mean_sample_rate_hz']
        self.assertTrue(55.0 <= reference <= 65.0, reference)
        self.assertAlmostEqual(report['attack_to_reference_rate_ratio'], 0.5, delta=0.1)
        self.assertEqual(report['decode']['crc_failures'], 0)
        self.assertTrue(report['position']['plausible'])

    def test_guard_band_samples_never_count(self):
        run = simulate_run(SamplingSchedule(), 30.0, seed=22)
        t0 = run.start_tow_s
        window = PhaseWindow()
        existing = {s.tow_us for s in run.samples}
        injected = [
            SolutionSample(tow, tow + 999_999, 5_000, 5_000, 0)
            for tow in (int((t0 + 8.0) * 1e6) + 1_237 * k for k in range(3_000))
            if tow not in existing and tow < int((t0 + 12.0) * 1e6)
        ]
        polluted = sorted(run.samples + injected, key=lambda s: s.tow_us)
        clean_report = analyze_samples(run.samples, t0, window)
        polluted_report = analyze_samples(polluted, t0, window)
        self.assertEqual(clean_report['phases'], polluted_report['phases'])

    def test_analyze_command(self):
        run = simulate_run(SamplingSchedule(), 30.0, seed=23, script=preset_script('double', rng=23))
        capture, _ = self.write_capture(run)
        out = self.dir / 'report.json'
        call_command('analyze', capture=str(capture), out=str(out), emit_plot_data=str(self.dir / 'plots'))
        report = json.loads(out.read_text())
        self.assertLess(report['attack_to_reference_rate_ratio'], 0.1)
        self.assertGreaterEqual(report['phases']['attack']['longest_increment_s'], 1.0)
        self.assertTrue((self.dir / 'plots' / 'increments_reference.csv').exists())

    def test_analyze_latency_command(self):
        log = self.dir / 'latency.csv'
        writer = LatencyLogWriter(log)
        for record in latency_records([7_000, 7_500, 6_800, 13_000]):
            writer.write(record)
        writer.flush()
        out = self.dir / 'latency.json'
        call_command('analyze_latency', log=str(log), out=str(out))
        report = json.loads(out.read_text())
        self.assertEqual(report['records'], 4)
        self.assertAlmostEqual(report['latency']['median_s'], 0.00725)

    def test_write_plot_data(self):
        summary = latency_summary(latency_records([1_000, 2_000, 3_000]))
        written = write_plot_data(self.dir, increments={'run': [0.01, 0.02]}, histograms={'ref': summary})
        self.assertEqual(len(written), 2)
        with open(self.dir / 'increments_run.csv', newline='') as f:
            rows = list(csv.reader(f))
        self.assertEqual(rows[0], ['index', 'increment_s'])
        self.assertEqual(len(rows), 3)
