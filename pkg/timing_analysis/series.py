# timing_analysis/series.py
"""
Timestamp series and phase bookkeeping.

Timestamps are kept as integer microseconds, the resolution the device
reports, so that constant offsets cancel exactly in every metric.
"""
import enum
from dataclasses import dataclass

import numpy as np

from main.exceptions import TowWraparoundError

WEEK_US = 604800 * 1_000_000


def to_us(seconds) -> int:
    return int(round(seconds * 1e6))


class Phase(str, enum.Enum):
    REFERENCE = 'reference'
    ATTACK = 'attack'


@dataclass(frozen=True)
class PhaseWindow:
    """Run-relative analysis windows: reference [a, b), discarded gap [b, c), attack [c, d]."""
    reference: tuple = (0.0, 8.0)
    gap: tuple = (8.0, 12.0)
    attack: tuple = (12.0, 30.0)

    def __post_init__(self):
        bounds = (*self.reference, *self.gap, *self.attack)
        if any(a > b for a, b in zip(bounds, bounds[1:])):
            raise ValueError(f"phase windows must be ordered and non-overlapping: {self}")

    @classmethod
    def from_attack_start(cls, attack_start_s=10.0, duration_s=30.0, guard_s=2.0) -> 'PhaseWindow':
        """Guard band of ``guard_s`` on either side of the nominal attack start."""
        return cls(
            reference=(0.0, attack_start_s - guard_s),
            gap=(attack_start_s - guard_s, attack_start_s + guard_s),
            attack=(attack_start_s + guard_s, duration_s),
        )

    def mask(self, phase, relative_us: np.ndarray) -> np.ndarray:
        phase = Phase(phase)
        if phase is Phase.REFERENCE:
            lo, hi = self.reference
            return (relative_us >= to_us(lo)) & (relative_us < to_us(hi))
        lo, hi = self.attack
        return (relative_us >= to_us(lo)) & (relative_us <= to_us(hi))

    def as_dict(self):
        return {'reference': list(self.reference), 'gap': list(self.gap), 'attack': list(self.attack)}


@dataclass(frozen=True, eq=False)
class TimingSeries:
    tow_us: np.ndarray
    sys_us: np.ndarray

    def __post_init__(self):
        tow = np.asarray(self.tow_us, dtype=np.int64).reshape(-1)
        sys = np.asarray(self.sys_us, dtype=np.int64).reshape(-1)
        if tow.shape != sys.shape:
            raise ValueError(f"tow and sys lengths differ: {tow.size} vs {sys.size}")
        steps = np.diff(tow)
        if steps.size and steps.min() <= 0:
            i = int(np.argmin(steps))
            if steps[i] < -WEEK_US // 2:
                raise TowWraparoundError(f"tow wraps at the GPS week boundary after sample {i}")
            raise ValueError(f"tow must be strictly increasing (sample {i + 1})")
        object.__setattr__(self, 'tow_us', tow)
        object.__setattr__(self, 'sys_us', sys)

    @classmethod
    def from_samples(cls, samples) -> 'TimingSeries':
        return cls(
            np.fromiter((s.tow_us for s in samples), dtype=np.int64),
            np.fromiter((s.sys_time_us for s in samples), dtype=np.int64),
        )

    @classmethod
    def from_seconds(cls, tow, sys) -> 'TimingSeries':
        return cls(np.round(np.asarray(tow) * 1e6), np.round(np.asarray(sys) * 1e6))

    @classmethod
    def empty(cls) -> 'TimingSeries':
        return cls(np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64))

    def __len__(self):
        return int(self.tow_us.size)

    @property
    def tow(self) -> np.ndarray:
        return self.tow_us / 1e6

    @property
    def sys(self) -> np.ndarray:
        return self.sys_us / 1e6

    def subset(self, mask) -> 'TimingSeries':
        return TimingSeries(self.tow_us[mask], self.sys_us[mask])

    def run_relative(self, t0_s: float) -> 'TimingSeries':
        """Same series with tow measured from the run start ``t0_s`` (GPS time of week)."""
        return TimingSeries(self.tow_us - to_us(t0_s), self.sys_us)


def extract_phase(series: TimingSeries, window: PhaseWindow, phase, t0: float) -> TimingSeries:
    """Samples whose run-relative tow lies in the phase's interval; absolute timestamps are kept."""
    relative = series.tow_us - to_us(t0)
    return series.subset(window.mask(phase, relative))
