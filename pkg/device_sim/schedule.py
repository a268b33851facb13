# device_sim/schedule.py
"""
Output epochs of the simulated IMU/GNSS fusion filter.

The filter emits a solution at every IMU epoch. When a GNSS epoch falls
within ``merge_window_s`` after an IMU epoch, that IMU epoch is discarded and
the solution is emitted at the GNSS epoch instead. The two clocks are
incoherent (independent phases, GNSS drift), which is what makes the output
nonuniform.
"""
import math

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

MEDIUM_RATE_BAND_HZ = (55.0, 65.0)
EPOCH_EPSILON_S = 1e-9


class SamplingSchedule(BaseModel):
    """
    Fusion-filter clocks. The IMU default is 64 Hz, one below the ~65 Hz of the
    hardware, so the measured rate stays inside the 55-65 Hz medium band.
    """
    model_config = ConfigDict(frozen=True)

    nominal_rate_hz: float = Field(default=64.0, ge=MEDIUM_RATE_BAND_HZ[0], le=MEDIUM_RATE_BAND_HZ[1])
    imu_rate_hz: float = Field(default=64.0, gt=0)
    gnss_rate_hz: float = Field(default=5.0, gt=0)
    merge_window_s: float = Field(default=0.006, ge=0)
    imu_phase_s: float = Field(default=0.0, ge=0)
    gnss_phase_s: float = Field(default=0.0071, ge=0)
    gnss_drift_ppm: float = 37.0
    spike_probability: float = Field(default=0.0, ge=0, le=1)
    spike_max_epochs: int = Field(default=6, ge=1)

    @model_validator(mode='before')
    @classmethod
    def default_imu_rate(cls, data):
        if isinstance(data, dict) and data.get('imu_rate_hz') is None:
            data = {**data, 'imu_rate_hz': data.get('nominal_rate_hz', 64.0)}
        return data

    @model_validator(mode='after')
    def check_fusion_rule(self):
        if self.merge_window_s >= self.imu_period_s:
            raise ValueError("merge_window_s must be shorter than the IMU period")
        return self

    @property
    def imu_period_s(self) -> float:
        return 1.0 / self.imu_rate_hz

    @property
    def gnss_period_s(self) -> float:
        return (1.0 + self.gnss_drift_ppm * 1e-6) / self.gnss_rate_hz

    @property
    def nominal_increment_s(self) -> float:
        return 1.0 / self.nominal_rate_hz


def _next_imu_epoch(schedule: SamplingSchedule, t: float) -> float:
    period = schedule.imu_period_s
    k = math.floor((t - schedule.imu_phase_s) / period) + 1
    epoch = schedule.imu_phase_s + k * period
    while epoch <= t + EPOCH_EPSILON_S:
        k += 1
        epoch = schedule.imu_phase_s + k * period
    return epoch


def _first_gnss_epoch_at_or_after(schedule: SamplingSchedule, t: float) -> float:
    period = schedule.gnss_period_s
    j = max(0, math.ceil((t - schedule.gnss_phase_s) / period))
    epoch = schedule.gnss_phase_s + j * period
    while epoch < t - EPOCH_EPSILON_S:
        j += 1
        epoch = schedule.gnss_phase_s + j * period
    return epoch


def next_sample_time(schedule: SamplingSchedule, rng: np.random.Generator, t_prev: float) -> float:
    """Next output epoch strictly after t_prev (run-relative seconds)."""
    if t_prev < 0:
        raise ValueError(f"t_prev must be non-negative, got {t_prev}")

    imu_epoch = _next_imu_epoch(schedule, t_prev)
    if schedule.spike_probability and rng.random() < schedule.spike_probability:
        # rare filter stall: a few IMU epochs produce no output
        for _ in range(int(rng.integers(1, schedule.spike_max_epochs + 1))):
            imu_epoch = _next_imu_epoch(schedule, imu_epoch)

    if schedule.merge_window_s > 0:
        gnss_epoch = _first_gnss_epoch_at_or_after(schedule, imu_epoch)
        if gnss_epoch < imu_epoch + schedule.merge_window_s:
            return gnss_epoch
    return imu_epoch


def sample_times(schedule: SamplingSchedule, rng: np.random.Generator, duration_s: float, t_start=0.0):
    """All output epochs in (t_start, duration_s)."""
    times = []
    t = next_sample_time(schedule, rng, t_start)
    while t < duration_s:
        times.append(t)
        t = next_sample_time(schedule, rng, t)
    return np.asarray(times, dtype=np.float64)
