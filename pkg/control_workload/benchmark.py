# control_workload/benchmark.py
"""
Closed-loop latency benchmark: state -> mpc_step -> plant_step, with the
monotonic clock read immediately around every controller call.
"""
import csv
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from django.core.exceptions import ImproperlyConfigured

from .mpc import ControllerConfig, MpcController
from .plant import ReferenceWindow, VehicleState, leader_track, plant_step

logger = logging.getLogger(__name__)

LOG_HEADER = ('iteration', 't_enter_us', 't_exit_us')
REQUIRED_RESOLUTION_S = 1e-6


@dataclass(frozen=True)
class LatencyRecord:
    iteration: int
    t_enter: int  # monotonic clock, microseconds
    t_exit: int

    @property
    def duration_us(self) -> int:
        return self.t_exit - self.t_enter


class LatencyLogWriter:
    """CSV record sink; records are buffered and written on flush()."""

    def __init__(self, path):
        self.path = Path(path)
        self._pending = []

    def write(self, record: LatencyRecord):
        self._pending.append(record)

    def flush(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, 'w', newline='') as f:
            writer = csv.writer(f)
            writer.writerow(LOG_HEADER)
            for record in self._pending:
                writer.writerow((record.iteration, record.t_enter, record.t_exit))
        logger.info(f"Wrote {len(self._pending)} latency records to {self.path}")


def read_latency_log(path):
    with open(path, newline='') as f:
        reader = csv.DictReader(f)
        if tuple(reader.fieldnames or ()) != LOG_HEADER:
            raise ValueError(f"{path} is not a latency log (header {reader.fieldnames})")
        return [
            LatencyRecord(int(row['iteration']), int(row['t_enter_us']), int(row['t_exit_us']))
            for row in reader
        ]


def check_clock_resolution(clock_name='monotonic'):
    resolution = time.get_clock_info(clock_name).resolution
    if resolution > REQUIRED_RESOLUTION_S:
        raise ImproperlyConfigured(
            f"{clock_name} clock resolution is {resolution * 1e6:.1f} us; latency capture needs 1 us"
        )
    return resolution


def default_start_state() -> VehicleState:
    return VehicleState(x=0.0, y=1.0, heading=0.0, speed=8.0)


def run_benchmark(n_iterations: int, dt=None, log_sink=None, controller=None, start=None, trace=None):
    """
    Run the closed loop for n_iterations and return one LatencyRecord each.

    Records go to ``log_sink`` only after the loop so that writing never lands
    inside a measured interval. If ``trace`` is a list, (state, control) pairs
    are appended to it.
    """
    if n_iterations < 1:
        raise ValueError("n_iterations must be positive")
    check_clock_resolution()

    controller = controller or MpcController(ControllerConfig.from_settings(dt=dt))
    dt = controller.config.dt
    horizon = controller.config.horizon
    state = start or default_start_state()

    leader_start = VehicleState(x=state.x, y=0.0, heading=0.0, speed=10.0)
    track = leader_track(leader_start, n_iterations + horizon, dt,
                         steer_amplitude=0.03, wheelbase=controller.config.wheelbase)
    window = ReferenceWindow(track, horizon)
    enter_ns = np.zeros(n_iterations, dtype=np.int64)
    exit_ns = np.zeros(n_iterations, dtype=np.int64)
    clock = time.monotonic_ns
    mpc_step = controller.mpc_step

    logger.info(f"Workload starting: {n_iterations} iterations, dt={dt * 1000:.1f} ms, horizon={horizon}")
    for i in range(n_iterations):
        reference = window.at(i)
        t_enter = clock()
        control = mpc_step(state, reference)
        t_exit = clock()
        enter_ns[i] = t_enter
        exit_ns[i] = t_exit
        if trace is not None:
            trace.append((state, control))
        state = plant_step(state, control, dt, wheelbase=controller.config.wheelbase)

    records = [
        LatencyRecord(i, int(enter) // 1000, int(exit_) // 1000)
        for i, (enter, exit_) in enumerate(zip(enter_ns, exit_ns))
    ]
    logger.info(f"Workload finished: {n_iterations} iterations")

    if log_sink is not None:
        try:
            for record in records:
                log_sink.write(record)
            log_sink.flush()
        except OSError as e:
            logger.error(f"Latency log write failed after a complete run: {e}")
            raise
    return records
