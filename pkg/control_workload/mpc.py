# control_workload/mpc.py
"""
Fixed-cost tracking MPC for the kinematic bicycle.

Each call does the same amount of work regardless of the input:
  1. scores a fixed lattice of constant control sequences (vectorized),
     plus the zero sequence and the shifted previous solution;
  2. runs a fixed number of projected-gradient iterations from the best
     candidate, gradients by reverse accumulation through the rollout, with an
     accept/reject trust step;
  3. returns the first control of the best sequence seen.

Every buffer is allocated in the constructor; a step only writes into them.
"""
import math
from dataclasses import dataclass, replace

import numpy as np
from django.conf import settings

from main.exceptions import NumericError
from .plant import ControlInput, VehicleState, normalize_angle

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class ControllerConfig:
    horizon: int = 20
    dt: float = 0.018
    iterations: int = 30
    seed_grid: int = 21
    wheelbase: float = 2.7
    steer_max: float = 0.5
    accel_min: float = -4.0
    accel_max: float = 2.0
    q_position: float = 1.0
    q_heading: float = 2.0
    q_speed: float = 0.5
    r_steer: float = 0.1
    r_accel: float = 0.05
    initial_step: float = 0.1

    @classmethod
    def from_settings(cls, **overrides) -> 'ControllerConfig':
        config = cls(
            horizon=getattr(settings, 'MPC_HORIZON', 20),
            dt=getattr(settings, 'MPC_DT_MS', 18.0) / 1000.0,
            iterations=getattr(settings, 'MPC_ITERATIONS', 30),
            seed_grid=getattr(settings, 'MPC_SEED_GRID', 21),
            wheelbase=getattr(settings, 'VEHICLE_WHEELBASE_M', 2.7),
            steer_max=getattr(settings, 'STEER_MAX_RAD', 0.5),
            accel_min=getattr(settings, 'ACCEL_MIN', -4.0),
            accel_max=getattr(settings, 'ACCEL_MAX', 2.0),
        )
        overrides = {k: v for k, v in overrides.items() if v is not None}
        return replace(config, **overrides)

    def __post_init__(self):
        if self.horizon < 1 or self.iterations < 0 or self.seed_grid < 2:
            raise ValueError("horizon >= 1, iterations >= 0 and seed_grid >= 2 are required")
        if not (self.dt > 0 and self.steer_max > 0 and self.accel_min < self.accel_max):
            raise ValueError("dt, steering and acceleration bounds are inconsistent")


class MpcController:

    def __init__(self, config: ControllerConfig = None):
        self.config = config or ControllerConfig.from_settings()
        self.last_cost = math.inf

        n = self.config.horizon
        # trajectory of the last scalar rollout, states 0..N
        self._xs = [0.0] * (n + 1)
        self._ys = [0.0] * (n + 1)
        self._ths = [0.0] * (n + 1)
        self._vs = [0.0] * (n + 1)
        self._gate = [0.0] * n
        # reference targets for states 1..N
        self._rx = [0.0] * n
        self._ry = [0.0] * n
        self._rth = [0.0] * n
        self._rv = [0.0] * n
        # control sequences
        self._steer = [0.0] * n
        self._accel = [0.0] * n
        self._trial_steer = [0.0] * n
        self._trial_accel = [0.0] * n
        self._grad_steer = [0.0] * n
        self._grad_accel = [0.0] * n
        self._warm_steer = [0.0] * n
        self._warm_accel = [0.0] * n

        # constant-sequence lattice
        g = self.config.seed_grid
        steer_axis = np.linspace(-self.config.steer_max, self.config.steer_max, g)
        accel_axis = np.linspace(self.config.accel_min, self.config.accel_max, g)
        self._lattice_steer = np.zeros(g * g)
        self._lattice_accel = np.zeros(g * g)
        self._lattice_steer[:] = np.repeat(steer_axis, g)
        self._lattice_accel[:] = np.tile(accel_axis, g)
        self._lattice_turn = np.zeros(g * g)
        np.tan(self._lattice_steer, out=self._lattice_turn)
        self._lattice_turn *= self.config.dt / self.config.wheelbase
        self._lattice_effort = np.zeros(g * g)
        self._lattice_effort[:] = n * (
            self.config.r_steer * self._lattice_steer ** 2 + self.config.r_accel * self._lattice_accel ** 2
        )
        self._lx = np.zeros(g * g)
        self._ly = np.zeros(g * g)
        self._lth = np.zeros(g * g)
        self._lv = np.zeros(g * g)
        self._lcost = np.zeros(g * g)
        self._t1 = np.zeros(g * g)
        self._t2 = np.zeros(g * g)

    # ----- public API -----

    def mpc_step(self, state: VehicleState, reference_path) -> ControlInput:
        """First control of the horizon sequence minimizing tracking plus effort cost."""
        self._load(state, reference_path)
        self._seed(state)
        self._descend(state)
        self._remember_solution()
        return ControlInput(self._steer[0], self._accel[0])

    def sequence_cost(self, state: VehicleState, reference_path, steering, acceleration) -> float:
        """Cost of an explicit control sequence over the horizon."""
        self._load(state, reference_path)
        n = self.config.horizon
        if len(steering) < n or len(acceleration) < n:
            raise ValueError(f"control sequences need {n} elements")
        for k in range(n):
            self._trial_steer[k] = float(steering[k])
            self._trial_accel[k] = float(acceleration[k])
        return self._rollout(state, self._trial_steer, self._trial_accel)

    @property
    def last_sequence(self):
        return list(self._steer), list(self._accel)

    def reset(self):
        for k in range(self.config.horizon):
            self._warm_steer[k] = 0.0
            self._warm_accel[k] = 0.0
        self.last_cost = math.inf

    # ----- internals -----

    def _load(self, state, reference_path):
        n = self.config.horizon
        if len(reference_path) < n:
            raise ValueError(f"reference path has {len(reference_path)} states, horizon needs {n}")
        if not state.is_finite():
            raise NumericError(f"non-finite vehicle state: {state}")
        for k in range(n):
            ref = reference_path[k]
            if not ref.is_finite():
                raise NumericError(f"non-finite reference state at {k}: {ref}")
            self._rx[k] = ref.x
            self._ry[k] = ref.y
            self._rth[k] = ref.heading
            self._rv[k] = ref.speed

    def _rollout(self, state, steer, accel) -> float:
        cfg = self.config
        dt, wheelbase = cfg.dt, cfg.wheelbase
        qp, qh, qv, rs, ra = cfg.q_position, cfg.q_heading, cfg.q_speed, cfg.r_steer, cfg.r_accel
        xs, ys, ths, vs, gate = self._xs, self._ys, self._ths, self._vs, self._gate
        rx, ry, rth, rv = self._rx, self._ry, self._rth, self._rv

        x, y, th, v = state.x, state.y, state.heading, state.speed
        xs[0], ys[0], ths[0], vs[0] = x, y, th, v
        cost = 0.0
        for k in range(cfg.horizon):
            d = steer[k]
            a = accel[k]
            x_next = x + v * math.cos(th) * dt
            y_next = y + v * math.sin(th) * dt
            th_next = normalize_angle(th + v / wheelbase * math.tan(d) * dt)
            v_next = v + a * dt
            if v_next > 0.0:
                gate[k] = 1.0
            else:
                gate[k] = 0.0
                v_next = 0.0

            ex = x_next - rx[k]
            ey = y_next - ry[k]
            eth = normalize_angle(th_next - rth[k])
            ev = v_next - rv[k]
            cost += qp * (ex * ex + ey * ey) + qh * eth * eth + qv * ev * ev + rs * d * d + ra * a * a

            x, y, th, v = x_next, y_next, th_next, v_next
            xs[k + 1], ys[k + 1], ths[k + 1], vs[k + 1] = x, y, th, v
        return cost

    def _gradient(self, steer, accel):
        """Reverse accumulation through the trajectory left by the last rollout."""
        cfg = self.config
        dt, wheelbase = cfg.dt, cfg.wheelbase
        qp2, qh2, qv2 = 2.0 * cfg.q_position, 2.0 * cfg.q_heading, 2.0 * cfg.q_speed
        rs2, ra2 = 2.0 * cfg.r_steer, 2.0 * cfg.r_accel
        xs, ys, ths, vs, gate = self._xs, self._ys, self._ths, self._vs, self._gate
        rx, ry, rth, rv = self._rx, self._ry, self._rth, self._rv

        lx = ly = lth = lv = 0.0
        for k in range(cfg.horizon - 1, -1, -1):
            lx += qp2 * (xs[k + 1] - rx[k])
            ly += qp2 * (ys[k + 1] - ry[k])
            lth += qh2 * normalize_angle(ths[k + 1] - rth[k])
            lv += qv2 * (vs[k + 1] - rv[k])

            th, v = ths[k], vs[k]
            d = steer[k]
            g = gate[k]
            cos_th = math.cos(th)
            sin_th = math.sin(th)
            cos_d = math.cos(d)

            self._grad_steer[k] = rs2 * d + lth * v * dt / (wheelbase * cos_d * cos_d)
            self._grad_accel[k] = ra2 * accel[k] + lv * g * dt

            lth_prev = lth + lx * (-v * sin_th * dt) + ly * (v * cos_th * dt)
            lv_prev = lx * cos_th * dt + ly * sin_th * dt + lth * math.tan(d) * dt / wheelbase + lv * g
            lth, lv = lth_prev, lv_prev

    def _lattice_costs(self, state):
        cfg = self.config
        dt, wheelbase = cfg.dt, cfg.wheelbase
        x, y, th, v = self._lx, self._ly, self._lth, self._lv
        cost, t1, t2 = self._lcost, self._t1, self._t2
        x.fill(state.x)
        y.fill(state.y)
        th.fill(state.heading)
        v.fill(state.speed)
        cost.fill(0.0)

        for k in range(cfg.horizon):
            np.cos(th, out=t1)
            t1 *= v
            t1 *= dt
            np.sin(th, out=t2)
            t2 *= v
            t2 *= dt
            x += t1
            y += t2
            np.multiply(v, self._lattice_turn, out=t1)
            t1 /= wheelbase
            th += t1
            np.multiply(self._lattice_accel, dt, out=t1)
            v += t1
            np.maximum(v, 0.0, out=v)

            np.subtract(x, self._rx[k], out=t1)
            np.multiply(t1, t1, out=t1)
            np.subtract(y, self._ry[k], out=t2)
            np.multiply(t2, t2, out=t2)
            t1 += t2
            t1 *= cfg.q_position
            cost += t1

            np.subtract(th, self._rth[k] - math.pi, out=t1)
            np.remainder(t1, TWO_PI, out=t1)
            t1 -= math.pi
            np.multiply(t1, t1, out=t1)
            t1 *= cfg.q_heading
            cost += t1

            np.subtract(v, self._rv[k], out=t1)
            np.multiply(t1, t1, out=t1)
            t1 *= cfg.q_speed
            cost += t1

        cost += self._lattice_effort
        return int(np.argmin(cost))

    def _seed(self, state):
        n = self.config.horizon
        steer, accel = self._steer, self._accel

        best = self._lattice_costs(state)
        d0 = float(self._lattice_steer[best])
        a0 = float(self._lattice_accel[best])
        for k in range(n):
            steer[k] = d0
            accel[k] = a0
        best_cost = self._rollout(state, steer, accel)

        # zero sequence wins ties so an equilibrium stays exactly at rest
        for k in range(n):
            self._trial_steer[k] = 0.0
            self._trial_accel[k] = 0.0
        zero_cost = self._rollout(state, self._trial_steer, self._trial_accel)
        if zero_cost <= best_cost:
            best_cost = zero_cost
            self._accept_trial()

        warm_cost = self._rollout(state, self._warm_steer, self._warm_accel)
        if warm_cost < best_cost:
            best_cost = warm_cost
            for k in range(n):
                steer[k] = self._warm_steer[k]
                accel[k] = self._warm_accel[k]

        self.last_cost = best_cost

    def _descend(self, state):
        cfg = self.config
        n = cfg.horizon
        steer_span = 2.0 * cfg.steer_max
        accel_span = cfg.accel_max - cfg.accel_min
        step = cfg.initial_step

        for _ in range(cfg.iterations):
            self._rollout(state, self._steer, self._accel)
            self._gradient(self._steer, self._accel)

            scale = 0.0
            for k in range(n):
                scale = max(scale, abs(self._grad_steer[k]) * steer_span, abs(self._grad_accel[k]) * accel_span)
            if scale == 0.0:
                scale = 1.0

            for k in range(n):
                d = self._steer[k] - step * steer_span * steer_span * self._grad_steer[k] / scale
                a = self._accel[k] - step * accel_span * accel_span * self._grad_accel[k] / scale
                self._trial_steer[k] = min(cfg.steer_max, max(-cfg.steer_max, d))
                self._trial_accel[k] = min(cfg.accel_max, max(cfg.accel_min, a))

            trial_cost = self._rollout(state, self._trial_steer, self._trial_accel)
            if trial_cost < self.last_cost:
                self.last_cost = trial_cost
                self._accept_trial()
                step *= 1.5
            else:
                step *= 0.5

    def _accept_trial(self):
        for k in range(self.config.horizon):
            self._steer[k] = self._trial_steer[k]
            self._accel[k] = self._trial_accel[k]

    def _remember_solution(self):
        n = self.config.horizon
        for k in range(n - 1):
            self._warm_steer[k] = self._steer[k + 1]
            self._warm_accel[k] = self._accel[k + 1]
        self._warm_steer[n - 1] = self._steer[n - 1]
        self._warm_accel[n - 1] = self._accel[n - 1]
