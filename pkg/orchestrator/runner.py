# orchestrator/runner.py
"""
Experiment protocols.

GNSS: each repetition captures the device stream from t = 0 to the end of the
run while the attack begins at ``attack_start_s``: a flood in live mode, the
degradation script in scripted mode. Runs are analyzed one at a time and then
pooled per phase.

AD-stack: paired control-workload runs, reference first, then under flood.
"""
import logging
import threading
import time
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional

import numpy as np
from django.conf import settings
from django.utils import timezone

from control_workload.benchmark import LatencyLogWriter, run_benchmark
from control_workload.mpc import ControllerConfig, MpcController
from device_sim.server import stream
from main.exceptions import DosbenchError, ExperimentError, PrivilegeError
from packet_forge.flood import FloodConfig, TransportMode, flood, open_sender_socket
from stream_codec.codec import decode_file
from stream_codec.recorder import CAPTURE_SUFFIX, open_capture_connection, record
from timing_analysis.metrics import latency_durations, latency_summary, pooled_phase_metrics, sample_increments
from timing_analysis.reports import analyze_samples, rate_ratio, run_start_tow, write_plot_data, write_report
from timing_analysis.series import Phase, TimingSeries, extract_phase
from .config import ExperimentConfig, RunMode, Scenario

logger = logging.getLogger(__name__)

DEVICE_START_TIMEOUT_S = 10.0
DEVICE_JOIN_TIMEOUT_S = 10.0
META_NAME = 'meta.json'
FLOOD_WARMUP_S = 0.25
# the AD-stack flood runs until the workload finishes and sets the stop signal
ADSTACK_FLOOD_CEILING_S = 24 * 3600.0


class RunStatus(str, Enum):
    COMPLETED = 'completed'
    FAILED = 'failed'


@dataclass
class RunRecord:
    index: int
    phase: str = 'full'
    status: RunStatus = RunStatus.COMPLETED
    seed: Optional[int] = None
    capture_path: str = ''
    metrics: dict = field(default_factory=dict)
    flood_stats: dict = field(default_factory=dict)
    error_message: str = ''

    @property
    def ok(self) -> bool:
        return self.status is RunStatus.COMPLETED

    def fail(self, error):
        self.status = RunStatus.FAILED
        self.error_message = str(error)

    def as_dict(self):
        data = asdict(self)
        data['status'] = self.status.value
        return data


@dataclass
class AggregateReport:
    """Per-run records, pooled per-phase metrics and provenance of one experiment."""
    scenario: str
    mode: str
    config: dict
    config_hash: str
    started_at: str
    finished_at: str = ''
    output_dir: str = ''
    runs: list = field(default_factory=list)
    pooled: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    @classmethod
    def start(cls, config: ExperimentConfig, output_dir) -> 'AggregateReport':
        return cls(
            scenario=config.scenario.value, mode=config.mode.value, config=config.as_dict(),
            config_hash=config.config_hash, started_at=timezone.now().isoformat(), output_dir=str(output_dir),
        )

    @property
    def completed_runs(self):
        return [r for r in self.runs if r.ok]

    @property
    def failed_runs(self):
        return [r for r in self.runs if not r.ok]

    def as_dict(self):
        return {
            'scenario': self.scenario,
            'mode': self.mode,
            'provenance': {
                'config_hash': self.config_hash,
                'started_at': self.started_at,
                'finished_at': self.finished_at,
                'output_dir': self.output_dir,
                'achieved_flood_rates_pps': [
                    r.flood_stats['achieved_rate_pps'] for r in self.runs if r.flood_stats
                ],
                'notes': list(self.notes),
            },
            'config': self.config,
            'runs_completed': len(self.completed_runs),
            'runs_failed': len(self.failed_runs),
            'runs': [r.as_dict() for r in self.runs],
            'pooled': self.pooled,
        }

    def finish(self, path):
        self.finished_at = timezone.now().isoformat()
        write_report(path, self.as_dict())


class _Activity(threading.Thread):
    """Thread that keeps its callable's return value or exception for the joiner."""

    def __init__(self, name, func, *args, **kwargs):
        super().__init__(name=name, daemon=True)
        self._call = (func, args, kwargs)
        self.result = None
        self.error = None

    def run(self):
        func, args, kwargs = self._call
        try:
            self.result = func(*args, **kwargs)
        except Exception as e:
            self.error = e

    def join_started(self, timeout=None):
        if self.ident is not None:
            self.join(timeout)


def default_output_dir(config: ExperimentConfig) -> Path:
    root = Path(getattr(settings, 'DOSBENCH_OUTPUT_DIR', 'runs'))
    return root / f"{config.name}-{timezone.now():%Y%m%d-%H%M%S}"


def resolve_transport(flood_config: FloodConfig, notes: list) -> FloodConfig:
    """
    Flood config the experiment will really use, with provenance in ``notes``.

    Raw-socket privileges are checked once; without them the flood falls back to UDP.
    """
    if flood_config.attacker_count > 1:
        notes.append(
            f"{flood_config.attacker_count} attackers are threads of one process and start together; "
            f"separate attacking hosts would not be synchronized this closely"
        )
    if flood_config.transport_mode is not TransportMode.RAW_ICMP:
        return flood_config
    try:
        open_sender_socket(flood_config.transport_mode, flood_config.target_address, flood_config.target_port).close()
    except PrivilegeError as e:
        note = f"{e}; flood falls back to {TransportMode.UDP_FALLBACK.value}"
        logger.warning(note)
        notes.append(note)
        return flood_config.model_copy(update={'transport_mode': TransportMode.UDP_FALLBACK})
    return flood_config


def _scripted_gnss_run(config: ExperimentConfig, index: int, run_dir: Path):
    """One repetition against a local device simulator whose run clock starts at the capture's connect."""
    listening = threading.Event()
    stop = threading.Event()
    bound = {}

    def on_listening(port):
        bound['port'] = port
        listening.set()

    device = _Activity(
        f'device-sim-{index}', stream, (config.target.host, config.target.port), config.schedule,
        script=config.degradation_for(index), duration_s=config.duration_s, seed=config.run_seed(index),
        time_scale=config.time_scale, wait_for_client=True, start_tow_s=config.start_tow_s,
        on_listening=on_listening, stop_event=stop,
    )
    capture = run_dir / f"capture{CAPTURE_SUFFIX}"
    device.start()
    try:
        deadline = time.monotonic() + DEVICE_START_TIMEOUT_S
        while not listening.wait(0.05):
            if not device.is_alive() or time.monotonic() > deadline:
                raise device.error or ExperimentError("device simulator never started listening")
        meta = record((config.target.host, bound['port']), capture, meta_path=run_dir / META_NAME)
    except BaseException:
        stop.set()
        raise
    finally:
        device.join(DEVICE_JOIN_TIMEOUT_S)

    if device.error is not None:
        raise device.error
    summary = device.result
    meta.duration_s = config.duration_s
    meta.run_start_tow_s = summary.start_tow_s
    meta.extra = {'mode': RunMode.SCRIPTED.value, 'seed': config.run_seed(index), 'device': summary.as_dict()}
    meta.write(run_dir / META_NAME)
    return capture, meta, {}


def _live_gnss_run(config: ExperimentConfig, index: int, run_dir: Path, flood_config: FloodConfig):
    """One repetition against a real device; the flood timer starts with the capture connection."""
    host, port = config.target.host, config.target.port
    stop = threading.Event()
    attack = _Activity(
        f'flood-{index}', flood,
        flood_config.model_copy(update={'duration_s': config.duration_s - config.attack_start_s}), stop,
    )
    timer = threading.Timer(config.attack_start_s, attack.start)
    capture = run_dir / f"capture{CAPTURE_SUFFIX}"

    sock = open_capture_connection(host, port)
    timer.start()
    try:
        meta = record((host, port), capture, duration_s=config.duration_s, sock=sock, meta_path=run_dir / META_NAME)
    finally:
        timer.cancel()
        stop.set()
        attack.join_started()

    if attack.ident is None:
        raise ExperimentError(f"capture ended before the attack start at {config.attack_start_s} s")
    if attack.error is not None:
        raise attack.error
    stats = attack.result.as_dict()
    meta.extra = {'mode': RunMode.LIVE.value, 'flood': stats}
    meta.write(run_dir / META_NAME)
    return capture, meta, stats


def _analyze_run(capture, meta, window):
    samples, diagnostics = decode_file(capture)
    if not samples:
        raise ExperimentError(f"{capture} holds no decodable solution packets")
    t0 = run_start_tow(meta)
    metrics = analyze_samples(samples, t0, window)
    metrics['decode'] = diagnostics.as_dict()
    metrics['capture_meta'] = meta.as_dict()
    series = TimingSeries.from_samples(samples)
    return metrics, {phase: extract_phase(series, window, phase, t0) for phase in Phase}


def run_gnss_experiment(config: ExperimentConfig, out_dir=None, on_run=None) -> AggregateReport:
    """
    Repeat the GNSS protocol ``config.repetitions`` times and pool the phases.

    A run that fails is recorded as failed and the experiment moves on;
    ExperimentError is raised only when no run completes. ``on_run`` is called
    with each RunRecord as soon as it is final.
    """
    if config.scenario is not Scenario.GNSS:
        raise ValueError(f"run_gnss_experiment needs a gnss config, got {config.scenario.value}")
    out_dir = Path(out_dir or default_output_dir(config))
    out_dir.mkdir(parents=True, exist_ok=True)
    report = AggregateReport.start(config, out_dir)
    live = config.mode is RunMode.LIVE
    flood_config = resolve_transport(config.flood, report.notes) if live else None
    window = config.phase_window
    segments = {phase: [] for phase in Phase}

    logger.info(f"Experiment {config.name}: {config.repetitions} {config.mode.value} gnss runs -> {out_dir}")
    for k in range(config.repetitions):
        run = RunRecord(index=k, seed=None if live else config.run_seed(k))
        try:
            if live:
                capture, meta, stats = _live_gnss_run(config, k, out_dir / f"run-{k}", flood_config)
            else:
                capture, meta, stats = _scripted_gnss_run(config, k, out_dir / f"run-{k}")
            run.capture_path = str(capture)
            run.flood_stats = stats
            run.metrics, phases = _analyze_run(capture, meta, window)
        except (DosbenchError, OSError, ValueError) as e:
            run.fail(e)
            logger.warning(f"Run {k} of {config.name} failed: {e}")
        else:
            for phase, series in phases.items():
                segments[phase].append(series)
            logger.info(
                f"Run {k} of {config.name}: reference "
                f"{run.metrics['phases']['reference']['mean_sample_rate_hz']} Hz, "
                f"attack {run.metrics['phases']['attack']['mean_sample_rate_hz']} Hz"
            )
        report.runs.append(run)
        if on_run is not None:
            on_run(run)

    if not report.completed_runs:
        report.finish(out_dir / 'report.json')
        raise ExperimentError(f"all {config.repetitions} runs of {config.name} failed")

    pooled = {phase.value: pooled_phase_metrics(segments[phase]) for phase in Phase}
    pooled['attack_to_reference_rate_ratio'] = rate_ratio(pooled['attack'], pooled['reference'])
    report.pooled = pooled
    write_plot_data(
        out_dir / 'plots',
        increments={
            phase.value: np.concatenate([sample_increments(s) for s in segments[phase]]) for phase in Phase
        },
        rates={**{f"run-{r.index}": r.metrics['phases'] for r in report.completed_runs}, 'pooled': pooled},
    )
    report.finish(out_dir / 'report.json')
    logger.info(
        f"Experiment {config.name} finished: {len(report.completed_runs)}/{config.repetitions} runs, "
        f"attack/reference rate ratio {pooled['attack_to_reference_rate_ratio']}"
    )
    return report


def _workload_run(iterations, controller_config, log_path, flood_config=None):
    controller = MpcController(controller_config)
    sink = LatencyLogWriter(log_path)
    if flood_config is None:
        return run_benchmark(iterations, controller=controller, log_sink=sink), {}

    stop = threading.Event()
    attack = _Activity('flood', flood, flood_config.model_copy(update={'duration_s': ADSTACK_FLOOD_CEILING_S}), stop)
    attack.start()
    try:
        time.sleep(FLOOD_WARMUP_S)
        if attack.error is not None:
            raise attack.error
        records = run_benchmark(iterations, controller=controller, log_sink=sink)
    finally:
        stop.set()
        attack.join()
    if attack.error is not None:
        raise attack.error
    return records, attack.result.as_dict()


def run_adstack_experiment(config: ExperimentConfig, out_dir=None, on_run=None) -> AggregateReport:
    """
    Paired control-workload runs: each repetition runs the configured
    iterations without and then under the flood. The pooled block holds one
    LatencySummary per phase and how often the flood raised the latency.
    """
    if config.scenario is not Scenario.AD_STACK:
        raise ValueError(f"run_adstack_experiment needs an ad-stack config, got {config.scenario.value}")
    out_dir = Path(out_dir or default_output_dir(config))
    out_dir.mkdir(parents=True, exist_ok=True)
    report = AggregateReport.start(config, out_dir)
    flood_config = resolve_transport(config.flood, report.notes)
    dt = config.target.dt_ms / 1000.0 if config.target.dt_ms else None
    controller_config = ControllerConfig.from_settings(
        dt=dt, horizon=config.target.horizon, iterations=config.target.solver_iterations,
    )
    records = {Phase.REFERENCE: [], Phase.ATTACK: []}
    pairs = []

    logger.info(
        f"Experiment {config.name}: {config.repetitions} paired workload runs of "
        f"{config.target.iterations} iterations -> {out_dir}"
    )
    for k in range(config.repetitions):
        pair = {}
        for phase in (Phase.REFERENCE, Phase.ATTACK):
            run = RunRecord(index=k, phase=phase.value)
            log_path = out_dir / f"run-{k}" / f"latency_{phase.value}.csv"
            try:
                run_records, stats = _workload_run(
                    config.target.iterations, controller_config, log_path,
                    flood_config if phase is Phase.ATTACK else None,
                )
                summary = latency_summary(run_records)
            except (DosbenchError, OSError, ValueError) as e:
                run.fail(e)
                logger.warning(f"Workload run {k} ({phase.value}) of {config.name} failed: {e}")
            else:
                run.capture_path = str(log_path)
                run.flood_stats = stats
                run.metrics = {'records': len(run_records), 'latency': summary.as_dict(include_histogram=False)}
                records[phase].extend(run_records)
                pair[phase] = summary
            report.runs.append(run)
            if on_run is not None:
                on_run(run)
        if len(pair) == 2:
            pairs.append(pair)

    if not report.completed_runs:
        report.finish(out_dir / 'report.json')
        raise ExperimentError(f"all workload runs of {config.name} failed")

    summaries = {phase: latency_summary(r) for phase, r in records.items() if r}
    report.pooled = {phase.value: summaries[phase].as_dict() if phase in summaries else None for phase in records}
    report.pooled['paired_runs'] = {
        'pairs': len(pairs),
        'attack_median_not_lower': sum(p[Phase.ATTACK].median_s >= p[Phase.REFERENCE].median_s for p in pairs),
        'attack_p99_not_lower': sum(p[Phase.ATTACK].p99_s >= p[Phase.REFERENCE].p99_s for p in pairs),
    }
    write_plot_data(
        out_dir / 'plots',
        latencies={phase.value: latency_durations(r) for phase, r in records.items() if r},
        histograms={phase.value: s for phase, s in summaries.items()},
    )
    report.finish(out_dir / 'report.json')
    return report


def run_experiment(config: ExperimentConfig, out_dir=None, on_run=None) -> AggregateReport:
    if config.scenario is Scenario.AD_STACK:
        return run_adstack_experiment(config, out_dir, on_run)
    return run_gnss_experiment(config, out_dir, on_run)


def compare_presets(config: ExperimentConfig, presets=('single', 'double'), out_dir=None) -> dict:
    """Run the GNSS protocol once per degradation preset and line up the pooled rates."""
    if config.script is not None:
        raise ValueError("an explicit degradation script overrides every preset; drop it to compare presets")
    out_dir = Path(out_dir or default_output_dir(config))
    reports = {}
    for preset in presets:
        preset_config = ExperimentConfig.from_data({**config.as_dict(), 'preset': preset}, source=f"preset {preset}")
        reports[preset] = run_gnss_experiment(preset_config, out_dir / preset)

    comparison = {
        'config_hash': config.config_hash,
        'presets': {
            preset: {
                'reference_hz': r.pooled['reference']['mean_sample_rate_hz'],
                'attack_hz': r.pooled['attack']['mean_sample_rate_hz'],
                'attack_to_reference_rate_ratio': r.pooled['attack_to_reference_rate_ratio'],
                'attack_longest_increment_s': r.pooled['attack']['longest_increment_s'],
                'attack_jitter_s': r.pooled['attack']['double_difference_jitter_s'],
                'runs_completed': len(r.completed_runs),
                'report': str(out_dir / preset / 'report.json'),
            }
            for preset, r in reports.items()
        },
    }
    write_plot_data(out_dir / 'plots', rates={preset: r.pooled for preset, r in reports.items()})
    write_report(out_dir / 'comparison.json', comparison)
    return comparison
