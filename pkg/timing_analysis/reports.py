# timing_analysis/reports.py
import csv
import json
import logging
from pathlib import Path

from device_sim.samples import gps_tow_from_unix
from main.exceptions import UndefinedMetricError
from stream_codec.codec import decode_file
from stream_codec.recorder import CaptureMeta
from .metrics import latency_durations, latency_summary, phase_metrics, position_plausibility, sample_increments
from .series import Phase, PhaseWindow, TimingSeries, extract_phase

logger = logging.getLogger(__name__)


def run_start_tow(meta: CaptureMeta) -> float:
    """Run-start epoch as GPS time of week: recorded by the orchestrator, else the capture wall clock."""
    if meta.run_start_tow_s is not None:
        return meta.run_start_tow_s
    return gps_tow_from_unix(meta.capture_start_unix)


def rate_ratio(attack: dict, reference: dict):
    if attack['mean_sample_rate_hz'] is None or not reference['mean_sample_rate_hz']:
        return None
    return attack['mean_sample_rate_hz'] / reference['mean_sample_rate_hz']


def analyze_samples(samples, t0: float, window: PhaseWindow) -> dict:
    series = TimingSeries.from_samples(samples)
    reference = extract_phase(series, window, Phase.REFERENCE, t0)
    attack = extract_phase(series, window, Phase.ATTACK, t0)
    report = {
        't0_tow_s': t0,
        'phase_window': window.as_dict(),
        'samples': len(series),
        'phases': {
            Phase.REFERENCE.value: phase_metrics(reference),
            Phase.ATTACK.value: phase_metrics(attack),
        },
    }
    report['attack_to_reference_rate_ratio'] = rate_ratio(report['phases']['attack'], report['phases']['reference'])
    try:
        report['position'] = position_plausibility(samples).as_dict()
    except UndefinedMetricError:
        report['position'] = None
    return report


def analyze_capture(capture_path, meta: CaptureMeta, attack_at=10.0, duration_s=None, window=None) -> dict:
    """Decode a raw capture and compute per-phase metrics relative to the run start."""
    samples, diagnostics = decode_file(capture_path)
    duration = duration_s or meta.duration_s or 30.0
    window = window or PhaseWindow.from_attack_start(attack_at, duration)
    report = analyze_samples(samples, run_start_tow(meta), window)
    report['capture'] = str(capture_path)
    report['decode'] = diagnostics.as_dict()
    report['capture_meta'] = meta.as_dict()
    logger.info(
        f"Analyzed {capture_path}: reference {report['phases']['reference']['mean_sample_rate_hz']} Hz, "
        f"attack {report['phases']['attack']['mean_sample_rate_hz']} Hz"
    )
    return report


def analyze_latency_log(records, label='workload') -> dict:
    summary = latency_summary(records)
    return {'label': label, 'records': len(records), 'latency': summary.as_dict()}


def _write_columns(path: Path, columns: dict):
    names = list(columns)
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(names)
        writer.writerows(zip(*(columns[n] for n in names)))


def write_plot_data(directory, increments=None, latencies=None, histograms=None, rates=None):
    """
    CSV files for external plotting, one per argument given.

    ``increments`` and ``latencies`` map a label to a series of values,
    ``histograms`` maps a label to a LatencySummary, ``rates`` maps a label to
    a report ``phases`` block.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for label, values in (increments or {}).items():
        path = directory / f"increments_{label}.csv"
        _write_columns(path, {'index': range(len(values)), 'increment_s': list(values)})
        written.append(path)
    for label, values in (latencies or {}).items():
        path = directory / f"latency_{label}.csv"
        _write_columns(path, {'iteration': range(len(values)), 'duration_s': list(values)})
        written.append(path)
    for label, summary in (histograms or {}).items():
        path = directory / f"latency_histogram_{label}.csv"
        edges = summary.histogram_edges_s
        _write_columns(path, {'bin_lo_s': edges[:-1], 'bin_hi_s': edges[1:], 'count': summary.histogram_counts})
        written.append(path)
    if rates:
        path = directory / "phase_rates.csv"
        labels = list(rates)
        _write_columns(path, {
            'label': labels,
            'reference_hz': [rates[k]['reference']['mean_sample_rate_hz'] for k in labels],
            'attack_hz': [rates[k]['attack']['mean_sample_rate_hz'] for k in labels],
            'attack_longest_increment_s': [rates[k]['attack']['longest_increment_s'] for k in labels],
        })
        written.append(path)
    logger.info(f"Wrote {len(written)} plot data files to {directory}")
    return written


def capture_plot_data(directory, capture_path, report):
    """Increment series of one analyzed capture, split by phase."""
    samples, _ = decode_file(capture_path)
    series = TimingSeries.from_samples(samples)
    window = PhaseWindow(**{k: tuple(v) for k, v in report['phase_window'].items()})
    t0 = report['t0_tow_s']
    return write_plot_data(directory, increments={
        phase.value: sample_increments(extract_phase(series, window, phase, t0)) for phase in Phase
    })


def latency_plot_data(directory, records, label='workload'):
    return write_plot_data(directory, latencies={label: latency_durations(records)},
                           histograms={label: latency_summary(records)})


def write_report(path, report: dict):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report, indent=2, default=str))
    logger.info(f"Report written to {path}")
