# orchestrator/config.py
"""
Experiment configuration: one JSON file, validated by pydantic, with CLI
flags layered on top.
"""
import hashlib
import json
import logging
from enum import Enum
from pathlib import Path
from typing import Optional

from django.conf import settings
from django.core.exceptions import ImproperlyConfigured
from pydantic import (
    BaseModel, ConfigDict, Field, NonNegativeFloat, PositiveFloat, PositiveInt, ValidationError, model_validator,
)

from device_sim.degradation import PHASE_GUARD_S, PRESETS, DegradationScript, preset_script
from device_sim.schedule import SamplingSchedule
from packet_forge.flood import FloodConfig
from timing_analysis.series import PhaseWindow

logger = logging.getLogger(__name__)


class Scenario(str, Enum):
    GNSS = 'gnss'
    AD_STACK = 'ad-stack'


class RunMode(str, Enum):
    SCRIPTED = 'scripted'
    LIVE = 'live'


class TargetConfig(BaseModel):
    """Device endpoint for the GNSS protocol, workload parameters for the AD-stack protocol."""
    model_config = ConfigDict(frozen=True)

    host: str = Field(default_factory=lambda: getattr(settings, 'DEVICE_SIM_HOST', '127.0.0.1'))
    port: int = Field(default_factory=lambda: getattr(settings, 'DEVICE_SIM_PORT', 6001), ge=0, le=65535)
    iterations: PositiveInt = 50_000
    dt_ms: Optional[PositiveFloat] = None
    horizon: Optional[PositiveInt] = None
    solver_iterations: Optional[PositiveInt] = None


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str = 'experiment'
    scenario: Scenario = Scenario.GNSS
    mode: RunMode = RunMode.SCRIPTED
    duration_s: PositiveFloat = 30.0
    attack_start_s: NonNegativeFloat = 10.0
    repetitions: PositiveInt = 10
    seed: int = 0
    preset: str = 'single'
    script: Optional[DegradationScript] = None
    time_scale: PositiveFloat = 1.0
    start_tow_s: Optional[NonNegativeFloat] = None
    flood: FloodConfig = Field(default_factory=FloodConfig)
    target: TargetConfig = Field(default_factory=TargetConfig)
    schedule: SamplingSchedule = Field(default_factory=SamplingSchedule)

    @model_validator(mode='before')
    @classmethod
    def aim_flood_at_target(cls, data):
        """A flood without its own target_address is sent to the target host."""
        if not isinstance(data, dict):
            return data
        flood = data.get('flood') or {}
        if isinstance(flood, FloodConfig):
            flood = flood.model_dump(exclude_unset=True)
        if 'target_address' in flood:
            return data
        target = data.get('target') or {}
        if isinstance(target, TargetConfig):
            host = target.host
        else:
            host = target.get('host') or getattr(settings, 'DEVICE_SIM_HOST', '127.0.0.1')
        return {**data, 'flood': {**flood, 'target_address': host}}

    @model_validator(mode='after')
    def check_protocol(self):
        if self.attack_start_s >= self.duration_s:
            raise ValueError(f"attack_start_s ({self.attack_start_s}) must be before duration_s ({self.duration_s})")
        if self.scenario is Scenario.GNSS:
            if self.attack_start_s <= PHASE_GUARD_S or self.duration_s <= self.attack_start_s + PHASE_GUARD_S:
                raise ValueError(
                    f"the {PHASE_GUARD_S:g} s guard band around the attack start leaves no reference "
                    f"or attack phase for attack_start_s={self.attack_start_s}, duration_s={self.duration_s}"
                )
        if self.preset not in PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}; choose from {', '.join(PRESETS)}")
        if self.script is not None:
            if any(event.end_s > self.duration_s for event in self.script.outage_events):
                raise ValueError("degradation script outages run past the end of the run")
        return self

    @classmethod
    def load(cls, path=None, **overrides) -> 'ExperimentConfig':
        """
        Read ``path`` (JSON) and apply ``overrides``; None values are ignored
        so unset CLI flags leave the file's values alone.
        """
        data = {}
        if path is not None:
            try:
                data = json.loads(Path(path).read_text())
            except (OSError, json.JSONDecodeError) as e:
                raise ImproperlyConfigured(f"Cannot read experiment config {path}: {e}")
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_data(data, source=path or 'overrides')

    @classmethod
    def from_data(cls, data: dict, source='config') -> 'ExperimentConfig':
        try:
            return cls.model_validate(data)
        except ValidationError as e:
            raise ImproperlyConfigured(f"Invalid experiment config ({source}): {e}")

    def as_dict(self) -> dict:
        return self.model_dump(mode='json')

    @property
    def config_hash(self) -> str:
        canonical = json.dumps(self.as_dict(), sort_keys=True, separators=(',', ':'))
        return hashlib.sha256(canonical.encode()).hexdigest()

    @property
    def phase_window(self) -> PhaseWindow:
        return PhaseWindow.from_attack_start(self.attack_start_s, self.duration_s, PHASE_GUARD_S)

    def run_seed(self, index: int) -> int:
        return self.seed + index

    def degradation_for(self, index: int) -> Optional[DegradationScript]:
        """Scripted-mode degradation of repetition ``index``; an explicit script wins over the preset."""
        if self.script is not None:
            return self.script
        return preset_script(self.preset, self.duration_s, self.attack_start_s, rng=self.run_seed(index))
