"""Electromechanical ground truth for the throttle valve actuator.

Stepper motor with 256-fold microstepping and a speed-dependent torque limit,
a 1.5:1 toothed belt, a spring-less valve between hard stops, a Hall angle
sensor on the valve shaft, and a crude engine whose speed sets the suction
torque on the valve.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .kernels import layout as L
from .sim_core import PercentPosition, RngStream

FULL_STEP_DEG = 1.8
MICROSTEPS = 256
BELT_RATIO = 1.5
VALVE_TRAVEL_DEG = 69.0

# Hall sensor: 0.5 V .. 4.5 V over 90 deg of electrical travel, 5 V supply
HALL_TRAVEL_DEG = 90.0
HALL_V_LOW = 0.5
HALL_V_SPAN = 4.0
HALL_SUPPLY_V = 5.0


@dataclass
class TorqueCurve:
    """Pull-out torque (N*cm) versus motor speed (deg/s).

    Flat at ``hold`` up to ``corner``. Above it either falls linearly to zero
    at twice the corner speed (``linear``) or follows constant power
    (``hyperbolic``).
    """

    hold: float = 12.0
    corner: float = 360.0
    shape: str = "hyperbolic"
    requirement: float = 5.0

    def available(self, speed_deg_s: float) -> float:
        shape = L.SHAPE_LINEAR if self.shape == "linear" else L.SHAPE_HYPERBOLIC
        return kernels._plant_py.available_torque(abs(speed_deg_s), self.hold, self.corner, shape)


@dataclass
class HallModel:
    resolution_deg: float = 0.022
    linearity_deg: float = 0.225  # +-0.25 % of 90 deg travel
    drift_pct_per_h: float = 0.0
    offset_pct: float = 0.0
    # terminal-based linearity profile: a1*sin(pi*x) + a2*sin(2*pi*x), x = angle/69
    a1: float = 0.0
    a2: float = 0.0

    @classmethod
    def random_profile(cls, rng: RngStream, **kw) -> "HallModel":
        m = cls(**kw)
        w = rng.uniform(-1.0, 1.0, 2)
        scale = m.linearity_deg * rng.uniform(0.5, 1.0) / max(abs(w[0]) + abs(w[1]), 1e-12)
        m.a1, m.a2 = float(w[0] * scale), float(w[1] * scale)
        return m

    def linearity_error(self, shaft_deg: float) -> float:
        x = math.pi * shaft_deg / VALVE_TRAVEL_DEG
        return self.a1 * math.sin(x) + self.a2 * math.sin(2.0 * x)

    def error_bound_deg(self) -> float:
        return self.linearity_deg + self.resolution_deg


@dataclass
class HallReading:
    raw_v: float
    degrees: float
    position: PercentPosition


def hall_volts_to_deg(v: float) -> float:
    return (v - HALL_V_LOW) / HALL_V_SPAN * HALL_TRAVEL_DEG


def hall_measure(shaft_deg: float, model: HallModel, hours: float = 0.0,
                 fault: str | None = None) -> HallReading:
    """Sensor reading for a true shaft angle.

    ``fault`` may be ``short_vcc``, ``short_gnd`` or ``open``; the signal
    line then sits at a rail.
    """
    if fault == "short_vcc":
        v = HALL_SUPPLY_V
    elif fault in ("short_gnd", "open"):
        v = 0.0
    else:
        drift_deg = (model.offset_pct + model.drift_pct_per_h * hours) * VALVE_TRAVEL_DEG / 100.0
        deg = shaft_deg + model.linearity_error(shaft_deg) + drift_deg
        q = model.resolution_deg
        deg = math.floor(deg / q + 0.5) * q
        v = HALL_V_LOW + deg / HALL_TRAVEL_DEG * HALL_V_SPAN
    deg = hall_volts_to_deg(v)
    return HallReading(v, deg, PercentPosition.from_percent(deg / VALVE_TRAVEL_DEG * 100.0))


def transmission(motor_deg: float, ratio: float = BELT_RATIO) -> float:
    return motor_deg / ratio


def suction_disturbance(rpm: float, cap: float = 4.0, rpm_max: float = 9000.0) -> float:
    """Intake suction torque on the valve (N*cm): quadratic in engine speed, capped."""
    if rpm < 0:
        raise ValueError("engine speed must be non-negative")
    r = rpm / rpm_max
    return min(cap * r * r, cap)


@dataclass
class EngineModel:
    """First-order lag from valve opening to engine speed."""

    idle_rpm: float = 2000.0
    max_rpm: float = 9000.0
    tau_s: float = 0.3
    rpm: float = 0.0

    def step(self, valve_pct: float, dt_s: float, ignition: bool = True) -> float:
        target = self.idle_rpm + (self.max_rpm - self.idle_rpm) * valve_pct / 100.0 if ignition else 0.0
        self.rpm += (target - self.rpm) * (1.0 - math.exp(-dt_s / self.tau_s))
        return self.rpm


@dataclass
class PlantParams:
    ratio: float = BELT_RATIO
    microsteps: int = MICROSTEPS
    full_step_deg: float = FULL_STEP_DEG
    valve_min_deg: float = 0.0
    valve_max_deg: float = VALVE_TRAVEL_DEG
    friction_ncm: float = 1.0
    dvac_cap_ncm: float = 4.0
    stiction_ncm: float = 0.5
    detent_ncm: float = 1.0  # motor side, de-energized
    drift_deg_s_per_ncm: float = 0.5
    idle_rpm: float = 2000.0
    max_rpm: float = 9000.0
    engine_tau_s: float = 0.3
    engine_running: bool = True
    substep_us: int = 100
    torque: TorqueCurve = field(default_factory=TorqueCurve)
    hall: HallModel = field(default_factory=HallModel)
    random_hall_profile: bool = True

    @property
    def ustep_deg(self) -> float:
        return self.full_step_deg / self.microsteps

    @property
    def valve_ustep_deg(self) -> float:
        return self.ustep_deg / self.ratio

    @classmethod
    def from_dict(cls, d: dict | None) -> "PlantParams":
        d = dict(d or {})
        torque = TorqueCurve(**d.pop("torque", {}))
        hall = HallModel(**d.pop("hall", {}))
        return cls(torque=torque, hall=hall, **d)

    def to_dict(self) -> dict:
        return asdict(self)


class IgnitionLine:
    """Ignition enable; once cut by the safety contactor it stays off."""

    def __init__(self):
        self.on = True
        self.cut_at: int | None = None

    def cut(self, now: int) -> None:
        if self.on:
            self.on = False
            self.cut_at = now


@dataclass
class DriverStatus:
    """Diagnostic pins of the stepper driver."""

    fault: bool = False       # driver dead / over-temperature / short
    open_load: bool = False   # motor winding open


class Plant:
    """Stepper, belt, valve, Hall sensor and engine, integrated in fixed
    substeps. Integration is lazy: :meth:`advance_to` catches up whenever a
    node reads or commands the plant, which is equivalent to a stream of
    100 us events because all inputs are piecewise constant in between."""

    def __init__(self, params: PlantParams | None = None, rng: RngStream | None = None,
                 valve_deg: float = 0.0, ignition: IgnitionLine | None = None, t_us: int = 0):
        self.params = p = params or PlantParams()
        if p.random_hall_profile and rng is not None:
            h = p.hall
            self.hall = HallModel.random_profile(
                rng, resolution_deg=h.resolution_deg, linearity_deg=h.linearity_deg,
                drift_pct_per_h=h.drift_pct_per_h, offset_pct=h.offset_pct)
        else:
            self.hall = p.hall
        self.ignition = ignition or IgnitionLine()
        self.driver = DriverStatus()
        self.hall_fault: str | None = None
        self.t_us = int(t_us)

        self.S = np.zeros(L.N_STATE)
        self.P = np.zeros(L.N_PARAM)
        motor0 = round(valve_deg * p.ratio / p.ustep_deg) * p.ustep_deg
        self.S[L.S_MOTOR_DEG] = motor0
        self.S[L.S_SHAFT_DEG] = motor0 / p.ratio
        self.S[L.S_RPM] = p.idle_rpm if p.engine_running else 0.0

        P = self.P
        P[L.P_DT] = p.substep_us * 1e-6
        P[L.P_ENERGIZED] = 1.0
        P[L.P_MOTOR_OK] = 1.0
        P[L.P_BELT_OK] = 1.0
        P[L.P_IGNITION] = 1.0
        P[L.P_RATIO] = p.ratio
        P[L.P_USTEP_DEG] = p.ustep_deg
        P[L.P_VALVE_MIN] = p.valve_min_deg
        P[L.P_VALVE_MAX] = p.valve_max_deg
        P[L.P_FRICTION] = p.friction_ncm
        P[L.P_DVAC_CAP] = p.dvac_cap_ncm
        P[L.P_RPM_IDLE] = p.idle_rpm
        P[L.P_RPM_MAX] = p.max_rpm
        P[L.P_ENGINE_ALPHA] = 1.0 - math.exp(-(p.substep_us * 1e-6) / p.engine_tau_s)
        P[L.P_STICTION] = p.stiction_ncm
        P[L.P_DETENT] = p.detent_ncm
        P[L.P_DRIFT_GAIN] = p.drift_deg_s_per_ncm
        P[L.P_T_HOLD] = p.torque.hold
        P[L.P_T_CORNER] = p.torque.corner
        P[L.P_T_SHAPE] = L.SHAPE_LINEAR if p.torque.shape == "linear" else L.SHAPE_HYPERBOLIC
        self._enabled = True
        self._apply_enable()

    # -- commands -----------------------------------------------------------

    def _apply_enable(self):
        self.P[L.P_ENERGIZED] = 1.0 if (self._enabled and not self.driver.fault) else 0.0

    def set_command(self, usteps_per_s: float, enabled: bool) -> None:
        """Step frequency in microsteps/s (sign = direction, positive opens)."""
        self.P[L.P_FREQ] = float(usteps_per_s)
        self._enabled = bool(enabled)
        self._apply_enable()

    def set_load_extra(self, ncm: float) -> None:
        """Additional load torque at the motor shaft (test hook)."""
        self.P[L.P_LOAD_EXTRA] = float(ncm)

    def advance_to(self, t_us: int) -> None:
        dt = self.params.substep_us
        n = (int(t_us) - self.t_us) // dt
        if n <= 0:
            return
        self.P[L.P_IGNITION] = 1.0 if (self.ignition.on and self.params.engine_running) else 0.0
        kernels.advance_plant(self.S, self.P, n)
        self.t_us += n * dt

    def drive(self, usteps_per_s: float, dt_us: int, enabled: bool = True) -> None:
        self.set_command(usteps_per_s, enabled)
        self.advance_to(self.t_us + dt_us)

    # -- faults -------------------------------------------------------------

    def break_belt(self) -> None:
        self.P[L.P_BELT_OK] = 0.0

    def fail_motor(self) -> None:
        self.P[L.P_MOTOR_OK] = 0.0
        self.driver.open_load = True

    def fail_driver(self) -> None:
        self.driver.fault = True
        self._apply_enable()

    def set_hall_fault(self, mode: str | None) -> None:
        self.hall_fault = mode

    # -- observation --------------------------------------------------------

    def hall_read(self) -> HallReading:
        return hall_measure(self.valve_deg, self.hall, self.t_us / 3.6e9, self.hall_fault)

    @property
    def valve_deg(self) -> float:
        return float(self.S[L.S_SHAFT_DEG])

    @property
    def valve_pct(self) -> float:
        return self.valve_deg / self.params.valve_max_deg * 100.0

    @property
    def motor_deg(self) -> float:
        return float(self.S[L.S_MOTOR_DEG])

    @property
    def rpm(self) -> float:
        return float(self.S[L.S_RPM])

    @property
    def dvac(self) -> float:
        return float(self.S[L.S_DVAC])

    @property
    def energized(self) -> bool:
        return self.P[L.P_ENERGIZED] != 0.0

    @property
    def commanded(self) -> int:
        return int(self.S[L.S_COMMANDED])

    @property
    def executed(self) -> int:
        return int(self.S[L.S_EXECUTED])

    @property
    def lost_steps(self) -> int:
        return int(self.S[L.S_LOST])

    @property
    def stalled_steps(self) -> int:
        return int(self.S[L.S_STALLED])

    def max_step_rate(self, valve_deg_s: float) -> float:
        """Microsteps/s needed for a given valve speed."""
        return valve_deg_s * self.params.ratio / self.params.ustep_deg
