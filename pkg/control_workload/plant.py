# control_workload/plant.py
"""Kinematic bicycle plant closing the loop around the controller."""
import math
from dataclasses import dataclass

from django.conf import settings

from main.exceptions import NumericError


def normalize_angle(theta: float) -> float:
    """Map an angle to (-pi, pi]."""
    wrapped = math.remainder(theta, 2.0 * math.pi)
    if wrapped <= -math.pi:
        wrapped += 2.0 * math.pi
    return wrapped


@dataclass(frozen=True)
class VehicleState:
    x: float
    y: float
    heading: float
    speed: float

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in (self.x, self.y, self.heading, self.speed))


@dataclass(frozen=True)
class ControlInput:
    steering: float
    acceleration: float

    def is_finite(self) -> bool:
        return math.isfinite(self.steering) and math.isfinite(self.acceleration)

    def within(self, steer_max: float, accel_min: float, accel_max: float) -> bool:
        return abs(self.steering) <= steer_max and accel_min <= self.acceleration <= accel_max


def plant_step(state: VehicleState, control: ControlInput, dt: float, wheelbase=None) -> VehicleState:
    """Advance the bicycle model by dt; speed saturates at zero."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if not (state.is_finite() and control.is_finite()):
        raise NumericError(f"non-finite plant input: {state} {control}")
    wheelbase = wheelbase if wheelbase is not None else getattr(settings, 'VEHICLE_WHEELBASE_M', 2.7)

    v = state.speed
    theta = state.heading
    return VehicleState(
        x=state.x + v * math.cos(theta) * dt,
        y=state.y + v * math.sin(theta) * dt,
        heading=normalize_angle(theta + v / wheelbase * math.tan(control.steering) * dt),
        speed=max(0.0, v + control.acceleration * dt),
    )


def leader_track(start: VehicleState, length: int, dt: float, steer_amplitude=0.0, period_s=20.0, wheelbase=None):
    """
    Reference states produced by a virtual leader driving the same plant.

    Element k is the target for the state k+1 steps after `start`. With zero
    amplitude the track is the straight constant-speed continuation of `start`.
    """
    track = []
    state = start
    for k in range(length):
        steering = steer_amplitude * math.sin(2.0 * math.pi * k * dt / period_s) if steer_amplitude else 0.0
        state = plant_step(state, ControlInput(steering, 0.0), dt, wheelbase=wheelbase)
        track.append(state)
    return track


class ReferenceWindow:
    """Read-only view of `horizon` consecutive track states, re-pointed without copying."""

    def __init__(self, track, horizon: int):
        self._track = track
        self._horizon = horizon
        self._offset = 0

    def at(self, offset: int) -> 'ReferenceWindow':
        if offset + self._horizon > len(self._track):
            raise IndexError(f"reference track too short for offset {offset}")
        self._offset = offset
        return self

    def __len__(self):
        return self._horizon

    def __getitem__(self, k):
        if not 0 <= k < self._horizon:
            raise IndexError(k)
        return self._track[self._offset + k]
