# device_sim/samples.py
import enum
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

SECONDS_PER_WEEK = 604800
WEEK_US = SECONDS_PER_WEEK * 1_000_000
GPS_EPOCH_UNIX_S = 315964800  # 1980-01-06T00:00:00Z
GPS_UTC_LEAP_SECONDS = 18


def gps_seconds_from_unix(unix_s: float, leap_seconds: int = GPS_UTC_LEAP_SECONDS) -> float:
    return unix_s - GPS_EPOCH_UNIX_S + leap_seconds


def gps_tow_from_unix(unix_s: float, leap_seconds: int = GPS_UTC_LEAP_SECONDS) -> float:
    """GPS time of week in seconds for a Unix timestamp."""
    return gps_seconds_from_unix(unix_s, leap_seconds) % SECONDS_PER_WEEK


def gps_week_from_unix(unix_s: float, leap_seconds: int = GPS_UTC_LEAP_SECONDS) -> int:
    return int(gps_seconds_from_unix(unix_s, leap_seconds) // SECONDS_PER_WEEK)


class FixStatus(enum.IntEnum):
    NONE = 0
    FLOAT = 1
    FIXED = 2


class LocalPoint(NamedTuple):
    east: float = 0.0
    north: float = 0.0
    up: float = 0.0


@dataclass(frozen=True)
class SolutionSample:
    tow_us: int
    sys_time_us: int
    east_mm: int
    north_mm: int
    up_mm: int
    fix_status: FixStatus = FixStatus.FIXED

    @property
    def tow_s(self) -> float:
        return self.tow_us / 1e6

    @property
    def sys_time_s(self) -> float:
        return self.sys_time_us / 1e6


@dataclass(frozen=True)
class LatencyModel:
    """Processing latency between sampling and emission: normal, clipped at floor_s."""
    mean_s: float = 0.020
    spread_s: float = 0.025
    floor_s: float = 0.001

    def __post_init__(self):
        if self.mean_s < 0 or self.spread_s < 0 or self.floor_s < 0:
            raise ValueError("latency parameters must be non-negative")

    @classmethod
    def constant(cls, latency_s: float) -> 'LatencyModel':
        return cls(mean_s=latency_s, spread_s=0.0, floor_s=0.0)

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.spread_s == 0:
            return np.full(size, self.mean_s)
        return np.maximum(self.floor_s, rng.normal(self.mean_s, self.spread_s, size))


@dataclass(frozen=True)
class NoiseModel:
    """Stationary-antenna scatter, one standard deviation per axis."""
    horizontal_std_m: float = 0.01
    vertical_std_m: float = 0.02


def generate_sample(tow_s, truth: LocalPoint, noise: np.random.Generator, latency_s=0.0,
                    clock_offset_s=0.0, noise_model: NoiseModel = NoiseModel(),
                    fix_status=FixStatus.FIXED) -> SolutionSample:
    """
    Solution sampled at ``tow_s`` and emitted ``latency_s`` later on a device
    clock running ``clock_offset_s`` ahead of GPS time.
    """
    if not 0 <= tow_s < SECONDS_PER_WEEK:
        raise ValueError(f"tow {tow_s} s is outside the GPS week")
    de, dn, du = noise.normal(
        0.0, (noise_model.horizontal_std_m, noise_model.horizontal_std_m, noise_model.vertical_std_m)
    )
    tow_us = int(round(tow_s * 1e6))
    return SolutionSample(
        tow_us=tow_us,
        sys_time_us=tow_us + int(round((clock_offset_s + latency_s) * 1e6)),
        east_mm=int(round((truth.east + de) * 1000)),
        north_mm=int(round((truth.north + dn) * 1000)),
        up_mm=int(round((truth.up + du) * 1000)),
        fix_status=FixStatus(fix_status),
    )
