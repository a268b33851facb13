# timing_analysis/metrics.py
"""
Timing metrics on TimingSeries and latency records.

Quantiles everywhere use linear interpolation of order statistics (numpy's
``linear`` method). Pooled variants take one series per run and never form an
increment across two runs.
"""
import logging
from dataclasses import dataclass, field

import numpy as np

from device_sim.samples import FixStatus
from main.exceptions import UndefinedMetricError
from .series import TimingSeries

logger = logging.getLogger(__name__)

QUANTILE_METHOD = 'linear'
DEFAULT_HISTOGRAM_BINS = 50


def _require(series: TimingSeries, n: int, metric: str):
    if len(series) < n:
        raise UndefinedMetricError(f"{metric} needs at least {n} samples, got {len(series)}")


def _spread(values, q_lo, q_hi) -> float:
    lo, hi = np.quantile(values, [q_lo, q_hi], method=QUANTILE_METHOD)
    return float(hi - lo)


def sample_increments(series: TimingSeries) -> np.ndarray:
    """Consecutive tow differences in seconds."""
    return np.diff(series.tow_us) / 1e6


def mean_sample_rate(series: TimingSeries) -> float:
    _require(series, 2, "mean sample rate")
    return (len(series) - 1) / ((series.tow_us[-1] - series.tow_us[0]) / 1e6)


def longest_increment(series: TimingSeries) -> float:
    _require(series, 2, "longest increment")
    return float(np.diff(series.tow_us).max()) / 1e6


def double_differences_us(series: TimingSeries) -> np.ndarray:
    """t_dd,i = tow_i - tow_{i+1} + sys_{i+1} - sys_i, exact in integer microseconds."""
    return (series.tow_us[:-1] - series.tow_us[1:]) + (series.sys_us[1:] - series.sys_us[:-1])


def double_difference_jitter(series: TimingSeries, q_lo=0.05, q_hi=0.95) -> float:
    """
    Spread of the per-sample change in processing latency.

    Constant clock offsets and constant latencies cancel term by term, so a
    constant-latency series yields exactly 0.
    """
    _require(series, 3, "double-difference jitter")
    return _spread(double_differences_us(series), q_lo, q_hi) / 1e6


def _usable(segments, n):
    return [s for s in segments if len(s) >= n]


def pooled_mean_sample_rate(segments) -> float:
    """Sum of per-run sample steps over the sum of per-run spans."""
    usable = _usable(segments, 2)
    if not usable:
        raise UndefinedMetricError("no run has two samples in this phase")
    steps = sum(len(s) - 1 for s in usable)
    span_us = sum(int(s.tow_us[-1] - s.tow_us[0]) for s in usable)
    return steps / (span_us / 1e6)


def pooled_longest_increment(segments) -> float:
    usable = _usable(segments, 2)
    if not usable:
        raise UndefinedMetricError("no run has two samples in this phase")
    return max(longest_increment(s) for s in usable)


def pooled_double_difference_jitter(segments, q_lo=0.05, q_hi=0.95) -> float:
    usable = _usable(segments, 2)
    dd = np.concatenate([double_differences_us(s) for s in usable]) if usable else np.empty(0)
    if dd.size < 2:
        raise UndefinedMetricError("pooled jitter needs at least two double differences")
    return _spread(dd, q_lo, q_hi) / 1e6


def _defined(metric, *args):
    try:
        return metric(*args)
    except UndefinedMetricError:
        return None


def phase_metrics(series: TimingSeries) -> dict:
    """Per-phase report block; metrics that are undefined for the series are None."""
    return {
        'samples': len(series),
        'mean_sample_rate_hz': _defined(mean_sample_rate, series),
        'longest_increment_s': _defined(longest_increment, series),
        'double_difference_jitter_s': _defined(double_difference_jitter, series),
    }


def pooled_phase_metrics(segments) -> dict:
    return {
        'runs': len(segments),
        'samples': sum(len(s) for s in segments),
        'mean_sample_rate_hz': _defined(pooled_mean_sample_rate, segments),
        'longest_increment_s': _defined(pooled_longest_increment, segments),
        'double_difference_jitter_s': _defined(pooled_double_difference_jitter, segments),
    }


@dataclass(frozen=True)
class LatencySummary:
    count: int
    median_s: float
    std_s: float
    min_s: float
    max_s: float
    p99_s: float
    lower99_width_s: float
    histogram_edges_s: list = field(default_factory=list, repr=False)
    histogram_counts: list = field(default_factory=list, repr=False)

    def as_dict(self, include_histogram=True):
        data = {
            'count': self.count,
            'median_s': self.median_s,
            'std_s': self.std_s,
            'min_s': self.min_s,
            'max_s': self.max_s,
            'p99_s': self.p99_s,
            'lower99_width_s': self.lower99_width_s,
        }
        if include_histogram:
            data['histogram'] = {'edges_s': self.histogram_edges_s, 'counts': self.histogram_counts}
        return data


def latency_durations(records) -> np.ndarray:
    return np.fromiter((r.t_exit - r.t_enter for r in records), dtype=np.float64) / 1e6


def latency_summary(records, bins=DEFAULT_HISTOGRAM_BINS) -> LatencySummary:
    """Distribution of t_exit - t_enter over the records, in seconds."""
    d = latency_durations(records)
    if d.size == 0:
        raise UndefinedMetricError("latency summary needs at least one record")
    p99 = float(np.quantile(d, 0.99, method=QUANTILE_METHOD))
    low = float(d.min())
    counts, edges = np.histogram(d, bins=bins)
    return LatencySummary(
        count=int(d.size),
        median_s=float(np.median(d)),
        std_s=float(d.std()),
        min_s=low,
        max_s=float(d.max()),
        p99_s=p99,
        lower99_width_s=max(0.0, p99 - low),
        histogram_edges_s=edges.tolist(),
        histogram_counts=counts.tolist(),
    )


@dataclass(frozen=True)
class PositionScreen:
    samples: int
    horizontal_std_m: float
    vertical_std_m: float
    max_horizontal_excursion_m: float
    fixed_share: float
    plausible: bool

    def as_dict(self):
        return {
            'samples': self.samples,
            'horizontal_std_m': self.horizontal_std_m,
            'vertical_std_m': self.vertical_std_m,
            'max_horizontal_excursion_m': self.max_horizontal_excursion_m,
            'fixed_share': self.fixed_share,
            'plausible': self.plausible,
        }


def position_plausibility(samples, max_horizontal_spread_m=0.5):
    """
    Stationary-antenna screen: local track with its origin at the first
    solution. Plausible when no solution strays further than
    ``max_horizontal_spread_m`` from that origin.
    """
    if not samples:
        raise UndefinedMetricError("position screen needs at least one sample")
    enu = np.array([(s.east_mm, s.north_mm, s.up_mm) for s in samples], dtype=np.float64) / 1000.0
    enu -= enu[0]
    horizontal = np.hypot(enu[:, 0], enu[:, 1])
    excursion = float(horizontal.max())
    fixed = sum(1 for s in samples if s.fix_status == FixStatus.FIXED)
    return PositionScreen(
        samples=len(samples),
        horizontal_std_m=float(np.sqrt(enu[:, 0].var() + enu[:, 1].var())),
        vertical_std_m=float(enu[:, 2].std()),
        max_horizontal_excursion_m=excursion,
        fixed_share=fixed / len(samples),
        plausible=excursion <= max_horizontal_spread_m,
    )
