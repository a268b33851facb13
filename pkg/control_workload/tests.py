import math
import random
import statistics
import tempfile
import tracemalloc
from pathlib import Path
from types import SimpleNamespace
from unittest import mock

from django.core.exceptions import ImproperlyConfigured
from django.test import SimpleTestCase

from main.exceptions import NumericError
from .benchmark import LatencyLogWriter, read_latency_log, run_benchmark
from .mpc import ControllerConfig, MpcController
from .plant import ControlInput, ReferenceWindow, VehicleState, leader_track, normalize_angle, plant_step


class PlantStepTests(SimpleTestCase):

    def assertStateAlmostEqual(self, state, expected):
        for got, want in zip((state.x, state.y, state.heading, state.speed), expected):
            self.assertAlmostEqual(got, want, places=12)

    def test_straight_line(self):
        state = plant_step(VehicleState(0, 0, 0, 1), ControlInput(0, 0), 1.0)
        self.assertStateAlmostEqual(state, (1, 0, 0, 1))

    def test_zero_speed_is_a_fixed_point(self):
        state = plant_step(VehicleState(0, 0, 0, 0), ControlInput(0.5, 0), 1.0)
        self.assertStateAlmostEqual(state, (0, 0, 0, 0))

    def test_hand_evaluated_step(self):
        state = plant_step(VehicleState(0, 0, math.pi / 2, 2), ControlInput(0, 1), 0.5)
        self.assertStateAlmostEqual(state, (0, 1, math.pi / 2, 2.5))

    def test_speed_saturates_at_zero(self):
        state = plant_step(VehicleState(0, 0, 0, 1), ControlInput(0, -10), 1.0)
        self.assertEqual(state.speed, 0.0)

    def test_heading_stays_in_half_open_interval(self):
        state = plant_step(VehicleState(0, 0, math.pi - 0.01, 10), ControlInput(0.4, 0), 0.5, wheelbase=2.7)
        self.assertGreater(state.heading, -math.pi)
        self.assertLessEqual(state.heading, math.pi)
        self.assertEqual(normalize_angle(-math.pi), math.pi)
        self.assertEqual(normalize_angle(math.pi), math.pi)

    def test_non_finite_input(self):
        with self.assertRaises(NumericError):
            plant_step(VehicleState(0, math.nan, 0, 1), ControlInput(0, 0), 0.1)
        with self.assertRaises(NumericError):
            plant_step(VehicleState(0, 0, 0, 1), ControlInput(math.inf, 0), 0.1)

    def test_non_positive_dt(self):
        with self.assertRaises(ValueError):
            plant_step(VehicleState(0, 0, 0, 1), ControlInput(0, 0), 0.0)


class MpcControllerTests(SimpleTestCase):

    def setUp(self):
        self.config = ControllerConfig()
        self.controller = MpcController(self.config)

    def straight_reference(self, start=VehicleState(0.0, 0.0, 0.0, 10.0)):
        return leader_track(start, self.config.horizon, self.config.dt, wheelbase=self.config.wheelbase)

    def grid_best(self, state, reference):
        n = self.config.horizon
        best = math.inf
        for i in range(21):
            d = -self.config.steer_max + i * (2 * self.config.steer_max) / 20
            for j in range(21):
                a = self.config.accel_min + j * (self.config.accel_max - self.config.accel_min) / 20
                best = min(best, self.controller.sequence_cost(state, reference, [d] * n, [a] * n))
        return best

    def test_equilibrium_on_reference(self):
        start = VehicleState(0.0, 0.0, 0.0, 10.0)
        control = self.controller.mpc_step(start, self.straight_reference(start))
        self.assertLess(abs(control.steering), 1e-6)
        self.assertLess(abs(control.acceleration), 1e-6)

    def test_offset_left_steers_toward_path(self):
        reference = self.straight_reference()
        state = VehicleState(0.0, 1.0, 0.0, 10.0)
        control = self.controller.mpc_step(state, reference)
        self.assertLess(control.steering, 0.0)
        n = self.config.horizon
        zero_cost = self.controller.sequence_cost(state, reference, [0.0] * n, [0.0] * n)
        self.assertLess(self.controller.last_cost, zero_cost)

    def test_controls_respect_bounds(self):
        reference = self.straight_reference()
        control = self.controller.mpc_step(VehicleState(0.0, 5.0, 1.0, 2.0), reference)
        self.assertTrue(control.within(self.config.steer_max, self.config.accel_min, self.config.accel_max))

    def test_beats_brute_force_grid(self):
        rng = random.Random(441)
        reference = self.straight_reference()
        for _ in range(100):
            state = VehicleState(
                rng.uniform(-1.0, 1.0), rng.uniform(-2.0, 2.0), rng.uniform(-0.5, 0.5), rng.uniform(0.0, 15.0),
            )
            self.controller.reset()
            self.controller.mpc_step(state, reference)
            self.assertLessEqual(self.controller.last_cost, self.grid_best(state, reference) + 1e-6)

    def test_rollout_matches_plant_step(self):
        rng = random.Random(3)
        n = self.config.horizon
        state = VehicleState(0.3, -0.2, 0.1, 9.0)
        reference = self.straight_reference()
        steer = [rng.uniform(-0.5, 0.5) for _ in range(n)]
        accel = [rng.uniform(-4.0, 2.0) for _ in range(n)]
        self.controller.sequence_cost(state, reference, steer, accel)
        s = state
        for k in range(n):
            s = plant_step(s, ControlInput(steer[k], accel[k]), self.config.dt, wheelbase=self.config.wheelbase)
        final = self.controller._xs[n], self.controller._ys[n], self.controller._ths[n], self.controller._vs[n]
        self.assertEqual(final, (s.x, s.y, s.heading, s.speed))

    def test_gradient_matches_finite_differences(self):
        rng = random.Random(11)
        n = self.config.horizon
        reference = self.straight_reference()
        state = VehicleState(0.1, 0.8, 0.05, 9.5)
        steer = [rng.uniform(-0.2, 0.2) for _ in range(n)]
        accel = [rng.uniform(-1.0, 1.0) for _ in range(n)]

        self.controller.sequence_cost(state, reference, steer, accel)
        self.controller._gradient(self.controller._trial_steer, self.controller._trial_accel)
        grad_steer = list(self.controller._grad_steer)
        grad_accel = list(self.controller._grad_accel)

        h = 1e-6
        for k in range(n):
            for seq, analytic in ((steer, grad_steer[k]), (accel, grad_accel[k])):
                original = seq[k]
                seq[k] = original + h
                up = self.controller.sequence_cost(state, reference, steer, accel)
                seq[k] = original - h
                down = self.controller.sequence_cost(state, reference, steer, accel)
                seq[k] = original
                self.assertAlmostEqual(analytic, (up - down) / (2 * h), delta=1e-4 * max(1.0, abs(analytic)))

    def test_short_reference_rejected(self):
        with self.assertRaises(ValueError):
            self.controller.mpc_step(VehicleState(0, 0, 0, 1), self.straight_reference()[:5])

    def test_non_finite_state_rejected(self):
        with self.assertRaises(NumericError):
            self.controller.mpc_step(VehicleState(math.inf, 0, 0, 1), self.straight_reference())

    def test_steady_state_step_holds_no_new_memory(self):
        track = leader_track(VehicleState(0, 0, 0, 10), 400, self.config.dt, steer_amplitude=0.03)
        window = ReferenceWindow(track, self.config.horizon)
        state = VehicleState(0, 1, 0, 8)
        for i in range(20):
            state = plant_step(state, self.controller.mpc_step(state, window.at(i)), self.config.dt)

        only_workload = [tracemalloc.Filter(True, '*control_workload*')]
        tracemalloc.start()
        try:
            before = tracemalloc.take_snapshot().filter_traces(only_workload)
            for i in range(20, 220):
                state = plant_step(state, self.controller.mpc_step(state, window.at(i)), self.config.dt)
            after = tracemalloc.take_snapshot().filter_traces(only_workload)
        finally:
            tracemalloc.stop()
        growth = sum(stat.size_diff for stat in after.compare_to(before, 'filename'))
        self.assertLess(growth, 1024)


class BenchmarkTests(SimpleTestCase):

    def small_controller(self):
        return MpcController(ControllerConfig(iterations=10, seed_grid=5))

    def test_single_iteration(self):
        records = run_benchmark(1, controller=self.small_controller())
        self.assertEqual(len(records), 1)
        self.assertGreaterEqual(records[0].t_exit, records[0].t_enter)

    def test_record_count_and_ordering(self):
        records = run_benchmark(200, controller=self.small_controller())
        self.assertEqual([r.iteration for r in records], list(range(200)))
        for previous, current in zip(records, records[1:]):
            self.assertGreater(current.t_enter, previous.t_enter)
            self.assertGreaterEqual(current.t_exit, current.t_enter)

    def test_trajectories_are_bit_identical(self):
        first, second = [], []
        run_benchmark(60, controller=self.small_controller(), trace=first)
        run_benchmark(60, controller=self.small_controller(), trace=second)
        self.assertEqual(first, second)

    def test_trace_covers_every_iteration(self):
        trace = []
        run_benchmark(50, controller=self.small_controller(), trace=trace)
        self.assertEqual(len(trace), 50)
        self.assertTrue(all(state.is_finite() and control.is_finite() for state, control in trace))
        self.assertLess(trace[0][1].steering, 0.0)

    def test_log_written_after_run(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'latency.csv'
            records = run_benchmark(20, controller=self.small_controller(), log_sink=LatencyLogWriter(path))
            self.assertEqual(path.read_text().splitlines()[0], 'iteration,t_enter_us,t_exit_us')
            self.assertEqual(read_latency_log(path), records)

    def test_sink_failure_surfaces_after_run(self):
        class BrokenSink:
            written = 0

            def write(self, record):
                self.written += 1

            def flush(self):
                raise OSError("disk full")

        sink = BrokenSink()
        with self.assertRaises(OSError):
            run_benchmark(5, controller=self.small_controller(), log_sink=sink)
        self.assertEqual(sink.written, 5)

    def test_coarse_clock_is_a_configuration_error(self):
        coarse = SimpleNamespace(resolution=1e-3)
        with mock.patch('control_workload.benchmark.time.get_clock_info', return_value=coarse):
            with self.assertRaises(ImproperlyConfigured):
                run_benchmark(1, controller=self.small_controller())

    def test_unloaded_runs_are_stable(self):
        medians = []
        for _ in range(2):
            records = run_benchmark(100)
            medians.append(statistics.median(r.duration_us for r in records))
        self.assertLessEqual(max(medians), 2 * max(1, min(medians)))
