# device_sim/degradation.py
"""
Scripted degradation and full-run simulation.

A run is simulated in two stages. The undegraded timeline (epochs, position
noise, processing latency) is drawn first from its own random streams; the
degradation script is applied afterwards from a separate stream, so it only
removes samples or delays their emission and never moves a sampling epoch.
"""
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from django.core.exceptions import ImproperlyConfigured
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .samples import SECONDS_PER_WEEK, LatencyModel, LocalPoint, NoiseModel, generate_sample
from .schedule import SamplingSchedule, sample_times

logger = logging.getLogger(__name__)

PRESETS = ('none', 'single', 'double')
SINGLE_ATTACKER_DROP = 0.5
DOUBLE_ATTACKER_DROP = 0.95
DOUBLE_ATTACKER_OUTAGE_S = (1.0, 3.0)
PHASE_GUARD_S = 2.0


class OutageEvent(BaseModel):
    model_config = ConfigDict(frozen=True)

    start_s: float = Field(ge=0)
    duration_s: float = Field(gt=0)

    @property
    def end_s(self) -> float:
        return self.start_s + self.duration_s


class DegradationScript(BaseModel):
    model_config = ConfigDict(frozen=True)

    start_s: float = Field(default=10.0, ge=0)
    drop_probability: float = Field(default=0.0, ge=0, le=1)
    outage_events: tuple[OutageEvent, ...] = ()
    extra_latency_mean_s: float = Field(default=0.0, ge=0)
    extra_latency_spread_s: float = Field(default=0.0, ge=0)

    @model_validator(mode='after')
    def check_outages(self):
        events = sorted(self.outage_events, key=lambda e: e.start_s)
        for earlier, later in zip(events, events[1:]):
            if later.start_s < earlier.end_s:
                raise ValueError(f"outage at {later.start_s} s overlaps the one at {earlier.start_s} s")
        return self

    @classmethod
    def from_json(cls, path) -> 'DegradationScript':
        try:
            return cls.model_validate_json(Path(path).read_text())
        except ValidationError as e:
            raise ImproperlyConfigured(f"Invalid degradation script {path}: {e}")

    def check_fits(self, duration_s: float):
        for event in self.outage_events:
            if event.end_s > duration_s:
                raise ImproperlyConfigured(
                    f"outage {event.start_s}+{event.duration_s} s runs past the {duration_s} s run"
                )

    def in_outage(self, t: np.ndarray) -> np.ndarray:
        mask = np.zeros(t.shape, dtype=bool)
        for event in self.outage_events:
            mask |= (t >= event.start_s) & (t < event.end_s)
        return mask


def preset_script(name: str, duration_s=30.0, attack_start_s=10.0, rng=None):
    """
    Deterministic stand-ins for the live attack configurations.

    ``single`` drops half of the attack-phase samples; ``double`` drops 95% and
    adds two outages of 1-3 s, one in each half of the analyzed attack phase.
    """
    if name == 'none':
        return None
    if name == 'single':
        return DegradationScript(start_s=attack_start_s, drop_probability=SINGLE_ATTACKER_DROP)
    if name == 'double':
        rng = np.random.default_rng(rng)
        lo = attack_start_s + PHASE_GUARD_S
        mid = (lo + duration_s) / 2
        events = []
        for a, b in ((lo, mid), (mid, duration_s)):
            length = min(rng.uniform(*DOUBLE_ATTACKER_OUTAGE_S), b - a)
            events.append(OutageEvent(start_s=rng.uniform(a, b - length), duration_s=length))
        return DegradationScript(
            start_s=attack_start_s, drop_probability=DOUBLE_ATTACKER_DROP, outage_events=tuple(events),
        )
    raise ValueError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")


@dataclass
class SimulatedRun:
    samples: list
    emit_offsets_s: np.ndarray  # run-relative emission time of each emitted sample
    start_tow_s: float
    generated: int = 0
    dropped: int = 0
    suppressed: int = 0
    timeline: list = field(default_factory=list, repr=False)  # every generated sample, degraded or not

    @property
    def emitted(self) -> int:
        return len(self.samples)


def simulate_run(schedule: SamplingSchedule, duration_s: float, seed: int, script: DegradationScript = None,
                 start_tow_s=345600.0, latency: LatencyModel = LatencyModel(), clock_offset_s=0.137,
                 truth: LocalPoint = LocalPoint(), noise_model: NoiseModel = NoiseModel()) -> SimulatedRun:
    """Every sample of one run, in emission order, plus degradation counts."""
    if duration_s <= 0:
        raise ValueError("duration_s must be positive")
    if script is not None:
        script.check_fits(duration_s)

    schedule_rng, noise_rng, latency_rng, degradation_rng = (
        np.random.default_rng(child) for child in np.random.SeedSequence(seed).spawn(4)
    )
    t = sample_times(schedule, schedule_rng, duration_s)
    delays = latency.draw(latency_rng, len(t))

    keep = np.ones(len(t), dtype=bool)
    suppressed = dropped = 0
    if script is not None:
        attack = t >= script.start_s
        n_attack = int(attack.sum())
        outage = script.in_outage(t) & attack
        drops = degradation_rng.random(n_attack) < script.drop_probability
        if script.extra_latency_mean_s or script.extra_latency_spread_s:
            extra = np.maximum(0.0, degradation_rng.normal(
                script.extra_latency_mean_s, script.extra_latency_spread_s, n_attack))
            delays = delays.copy()
            delays[attack] += extra
        dropped_mask = np.zeros(len(t), dtype=bool)
        dropped_mask[attack] = drops
        dropped_mask &= ~outage
        keep = ~(outage | dropped_mask)
        suppressed = int(outage.sum())
        dropped = int(dropped_mask.sum())

    # the device emits in order, so a sample never leaves before its predecessor
    emit_offsets = np.maximum.accumulate(t + delays) if len(t) else t
    samples = []
    previous_sys = -1
    for i, epoch in enumerate(t):
        sample = generate_sample(
            (start_tow_s + epoch) % SECONDS_PER_WEEK, truth, noise_rng,
            latency_s=delays[i], clock_offset_s=clock_offset_s, noise_model=noise_model,
        )
        if sample.sys_time_us < previous_sys:
            sample = replace(sample, sys_time_us=previous_sys)
        previous_sys = sample.sys_time_us
        samples.append(sample)

    emitted = [s for s, k in zip(samples, keep) if k]
    logger.debug(f"Simulated {len(samples)} epochs over {duration_s} s: {dropped} dropped, {suppressed} suppressed")
    return SimulatedRun(
        samples=emitted,
        emit_offsets_s=emit_offsets[keep],
        start_tow_s=start_tow_s,
        generated=len(samples),
        dropped=dropped,
        suppressed=suppressed,
        timeline=samples,
    )
