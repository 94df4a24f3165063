"""Throttle valve actuator ECU: setpoint intake, 1 kHz PI position loop,
fail-safe supervision, energy-save mode and end-stop calibration."""

from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

from .can_bus import (ID_TPS, ID_TVA_ERROR, ID_TVA_STATUS, NODE_TVA, BusFrame, CanBus,
                      Freshness, FreshnessMonitor, make_frame)
from .plant import HALL_TRAVEL_DEG, HALL_V_LOW, HALL_V_SPAN, Plant
from .sim_core import Scheduler, percent_decode
from .tps import ERR_PERSISTENT, ERR_SENSOR_MASK

CAUSE_BELT = 0x01
CAUSE_MOTOR = 0x02
CAUSE_DRIVER = 0x04
CAUSE_SENSOR = 0x08
CAUSE_MCU_TPS = 0x10
FLAG_DEGRADED = 0x20
FLAG_PARKED = 0x40
FLAG_FAILED = 0x80


class Cause(str, enum.Enum):
    NONE = "none"
    BELT = "belt"
    MOTOR = "motor"
    DRIVER = "driver"
    SENSOR = "sensor"
    MCU_TPS = "mcu_tps"
    MCU_TVA = "mcu_tva"


CAUSE_BITS = {Cause.BELT: CAUSE_BELT, Cause.MOTOR: CAUSE_MOTOR, Cause.DRIVER: CAUSE_DRIVER,
              Cause.SENSOR: CAUSE_SENSOR, Cause.MCU_TPS: CAUSE_MCU_TPS}


class Mode(str, enum.Enum):
    CALIBRATING = "calibrating"
    RUN = "run"
    IDLE_RETURN = "idle_return"
    FAILED = "failed"


@dataclass
class TvaConfig:
    kp: float = 90.0                  # (%/s) per %
    ki: float = 100.0                 # (%/s) per (% s)
    i_band_pct: float = 0.5
    max_valve_speed_deg_s: float = 750.0
    control_period_us: int = 1_000
    status_period_us: int = 20_000
    feedback_ma: int = 8
    failsafe_ma: int = 32
    failsafe_threshold_pct: float = 5.0
    failsafe_timer_us: int = 200_000
    energy_tol_pct: float = 0.15
    energy_dwell_us: int = 500_000
    cal_budget_us: int = 500_000
    cal_fast_pct_s: float = 100.0
    cal_slow_pct_s: float = 20.0
    cal_deadband_pct: float = 2.0
    stall_usteps: int = 64
    recal_interval_us: int = 60_000_000
    sensor_min_pct: float = -3.0
    sensor_max_pct: float = 103.0
    rail_low_v: float = 0.25
    rail_high_v: float = 4.75
    bus_grace_us: int = 100_000

    @classmethod
    def from_dict(cls, d: dict | None) -> "TvaConfig":
        return cls(**(d or {}))


class MovingAverage:
    """Windowed mean over the last ``n`` samples (exact for integer input)."""

    def __init__(self, n: int, initial=0):
        self.n = n
        self.buf = deque([initial] * n, maxlen=n)
        self.total = initial * n

    def push(self, x) -> float:
        self.total += x - self.buf[0]
        self.buf.append(x)
        return self.total / self.n

    def fill(self, x) -> None:
        self.buf = deque([x] * self.n, maxlen=self.n)
        self.total = x * self.n

    @property
    def mean(self) -> float:
        return self.total / self.n


class PiController:
    """PI with output clamp and conditional integration: the integrator is
    frozen whenever the output would saturate, and outside ``i_band`` (the
    I part only removes small, lasting deviations)."""

    def __init__(self, kp: float, ki: float, clamp: float, i_band: float = math.inf):
        self.kp = kp
        self.ki = ki
        self.clamp = clamp
        self.i_band = i_band
        self.integrator = 0.0
        self.saturated = False

    def update(self, e: float, dt_s: float, lo: float | None = None, hi: float | None = None) -> float:
        """``lo``/``hi`` tighten the symmetric clamp (soft end stops)."""
        hi = self.clamp if hi is None else min(hi, self.clamp)
        lo = -self.clamp if lo is None else max(lo, -self.clamp)
        trial = self.integrator + self.ki * e * dt_s if abs(e) <= self.i_band else self.integrator
        u = self.kp * e + trial
        if u > hi:
            u = hi
            self.saturated = True
        elif u < lo:
            u = lo
            self.saturated = True
        else:
            self.integrator = trial
            self.saturated = False
        return u

    def reset(self) -> None:
        self.integrator = 0.0
        self.saturated = False


@dataclass
class FailSafeState:
    state: str = "ok"  # ok | degraded | failed
    cause: Cause = Cause.NONE
    error_timer_us: int = 0
    detected_at: int | None = None
    safe_action: str | None = None  # idle_return | ignition_interrupt
    safe_actions_executed: int = 0


class FailSafeMonitor:
    """Deviation supervision for belt/motor/driver faults.

    Compares moving averages of setpoint and feedback; a deviation above the
    threshold runs the fail-safe timer, and its overflow declares the error.
    """

    def __init__(self, cfg: TvaConfig):
        self.cfg = cfg
        self.ma_w = MovingAverage(cfg.failsafe_ma)
        self.ma_y = MovingAverage(cfg.failsafe_ma)
        self.timer_us = 0

    def reset(self, w_tenths: int, y_tenths: int) -> None:
        self.ma_w.fill(w_tenths)
        self.ma_y.fill(y_tenths)
        self.timer_us = 0

    def tick(self, w_tenths: int, y_tenths: int, dt_us: int) -> bool:
        dev = abs(self.ma_w.push(w_tenths) - self.ma_y.push(y_tenths)) / 10.0
        if dev > self.cfg.failsafe_threshold_pct:
            self.timer_us += dt_us
        else:
            self.timer_us = 0
        return self.timer_us >= self.cfg.failsafe_timer_us


class EnergySave:
    """Disables the driver once the control error stayed inside the tolerance
    for the dwell time; any larger error re-enables it at once."""

    def __init__(self, tol_pct: float, dwell_us: int):
        self.tol = tol_pct
        self.dwell_us = dwell_us
        self.since: int | None = None
        self.active = False
        self.parked_us = 0

    def update(self, e_pct: float, now: int) -> bool:
        if abs(e_pct) >= self.tol:
            self.since = None
            self.active = False
            return True
        if self.since is None:
            self.since = now
        if now - self.since >= self.dwell_us:
            self.active = True
        return not self.active

    def reset(self) -> None:
        self.since = None
        self.active = False


@dataclass
class CalibrationState:
    phase: str = "startup"  # startup | idle_recal | done | deferred | failed
    offset_tenths: int = 0
    started_at: int = 0
    finished_at: int | None = None
    usteps_since_change: float = 0.0
    last_reading: int | None = None
    pending: bool = False
    runs: int = 0


def volts_to_tenths(v: float) -> int:
    deg = (v - HALL_V_LOW) / HALL_V_SPAN * HALL_TRAVEL_DEG
    return int(math.floor(deg / 69.0 * 1000.0 + 0.5))


class TvaNode:
    def __init__(self, cfg: TvaConfig, plant: Plant, sched: Scheduler, bus: CanBus | None = None,
                 calibrate_on_start: bool = True):
        self.cfg = cfg
        self.plant = plant
        self.sched = sched
        self.bus = bus
        p = plant.params
        self.usteps_per_pct = (p.valve_max_deg / 100.0) * p.ratio / p.ustep_deg
        self.clamp_pct_s = cfg.max_valve_speed_deg_s / p.valve_max_deg * 100.0
        self.pi = PiController(cfg.kp, cfg.ki, self.clamp_pct_s, cfg.i_band_pct)
        self.fb = MovingAverage(cfg.feedback_ma)
        self.fs = FailSafeMonitor(cfg)
        self.es = EnergySave(cfg.energy_tol_pct, cfg.energy_dwell_us)
        self.monitor = FreshnessMonitor()
        self.failsafe = FailSafeState()
        self.cal = CalibrationState()
        self.mode = Mode.CALIBRATING if calibrate_on_start else Mode.RUN
        self.setpoint = 0           # w, tenths
        self.frames_seen = 0
        self.y_tenths = 0           # calibrated feedback, tenths
        self.y_filt = 0.0           # %
        self.e = 0.0
        self.u_usteps = 0.0
        self.enabled = False
        self.counter = 0
        self.err_counter = 0
        self.sensor_raw = 0.0
        self.decode_faults = 0
        self.on_tick: Callable[["TvaNode"], None] | None = None
        self._primed = False
        if bus is not None:
            bus.subscribe(NODE_TVA, self.on_frame)

    # -- bus ----------------------------------------------------------------

    @property
    def dead(self) -> bool:
        return self.bus is not None and self.bus.node_dead(NODE_TVA, self.sched.now)

    def on_frame(self, frame: BusFrame) -> None:
        if frame.id != ID_TPS:
            return
        self.receive_setpoint(frame)

    def receive_setpoint(self, frame: BusFrame) -> int:
        """Decode a TPS frame into the setpoint (tenths of %)."""
        now = self.sched.now
        pos, cnt, flags = frame.fields
        self.frames_seen += 1
        status = self.monitor.on_frame(cnt, now)
        if status == Freshness.COUNTER_ERROR:
            self._bus_fault(now)
            return self.setpoint
        p = percent_decode(pos)
        if p is None:
            self.decode_faults += 1
            self._degrade()
            return self.setpoint
        if flags & ERR_PERSISTENT:
            self._bus_fault(now)
            return self.setpoint
        if flags & ERR_SENSOR_MASK:
            # hold the last good setpoint
            self._degrade()
            return self.setpoint
        if self.mode in (Mode.RUN, Mode.CALIBRATING):
            self.setpoint = p.tenths
            if self.failsafe.state == "degraded" and self.mode == Mode.RUN:
                self.failsafe.state = "ok"
        return self.setpoint

    def _degrade(self) -> None:
        if self.failsafe.state == "ok":
            self.failsafe.state = "degraded"

    def _bus_fault(self, now: int) -> None:
        if self.mode in (Mode.FAILED, Mode.IDLE_RETURN):
            return
        self.mode = Mode.IDLE_RETURN
        self.failsafe.state = "degraded"
        self.failsafe.cause = Cause.MCU_TPS
        self.failsafe.detected_at = now
        self.setpoint = 0

    # -- supervision --------------------------------------------------------

    def _fail(self, cause: Cause, now: int) -> None:
        if self.failsafe.state == "failed":
            return
        fs = self.failsafe
        fs.state = "failed"
        fs.cause = cause
        if fs.detected_at is None or cause != Cause.MCU_TPS:
            fs.detected_at = now
        fs.safe_action = "idle_return" if cause == Cause.MCU_TPS else "ignition_interrupt"
        fs.safe_actions_executed += 1
        self.mode = Mode.FAILED
        self.enabled = False
        self.u_usteps = 0.0
        self.plant.set_command(0.0, False)
        if fs.safe_action == "ignition_interrupt":
            self._send_error_report()

    def _deviation_cause(self) -> Cause:
        d = self.plant.driver
        if d.fault:
            return Cause.DRIVER
        if d.open_load:
            return Cause.MOTOR
        return Cause.BELT

    def _sensor_ok(self, raw_v: float, tenths: int) -> bool:
        c = self.cfg
        if raw_v < c.rail_low_v or raw_v > c.rail_high_v:
            return False
        return c.sensor_min_pct * 10 <= tenths <= c.sensor_max_pct * 10

    # -- control ------------------------------------------------------------

    def control_tick(self) -> None:
        now = self.sched.now
        dt_us = self.cfg.control_period_us
        self.plant.advance_to(now)
        if self.dead:
            # MCU gone: the driver enable line falls back to disabled
            self.enabled = False
            self.plant.set_command(0.0, False)
            return

        reading = self.plant.hall_read()
        self.sensor_raw = raw = reading.raw_v
        raw_t = volts_to_tenths(raw)
        if self.mode != Mode.FAILED and not self._sensor_ok(raw, raw_t):
            self._fail(Cause.SENSOR, now)
        y = raw_t - self.cal.offset_tenths
        self.y_tenths = y
        if not self._primed:
            self.fb.fill(y)
            self.fs.reset(self.setpoint, y)
            self._primed = True
        self.y_filt = self.fb.push(y) / 10.0

        if self.mode == Mode.FAILED:
            self._emit(0.0, False)
            return

        if (self.mode == Mode.RUN and self.bus is not None and now >= self.cfg.bus_grace_us
                and self.monitor.poll(now) != Freshness.FRESH):
            self._bus_fault(now)

        if self.mode == Mode.CALIBRATING:
            self._calibration_step(raw_t, now)
            return

        w = 0 if self.mode == Mode.IDLE_RETURN else self.setpoint
        if self.mode == Mode.RUN and self.fs.tick(w, y, dt_us):
            self._fail(self._deviation_cause(), now)
            self._emit(0.0, False)
            return

        self.e = e = w / 10.0 - self.y_filt
        enable = self.es.update(e, now)
        if self.mode == Mode.IDLE_RETURN and not enable:
            # idle reached and settled: safe state
            self._fail(Cause.MCU_TPS, now)
            return
        if enable:
            # no motion into an end stop the feedback already reports reached
            lo = 0.0 if y <= 0 else None
            hi = 0.0 if y >= 1000 else None
            u = self.pi.update(e, dt_us * 1e-6, lo, hi)
        else:
            self.pi.reset()
            u = 0.0
        self._emit(u * self.usteps_per_pct, enable)

        if (self.mode == Mode.RUN and w == 0
                and (self.cal.pending or now - (self.cal.finished_at or 0) >= self.cfg.recal_interval_us)):
            self.start_calibration(now, "idle_recal")

    def _emit(self, u_usteps: float, enable: bool) -> None:
        self.u_usteps = u_usteps
        self.enabled = enable
        self.plant.set_command(u_usteps, enable)
        if self.on_tick is not None:
            self.on_tick(self)

    # -- calibration --------------------------------------------------------

    def start_calibration(self, now: int, phase: str = "startup") -> None:
        self.cal.phase = phase
        self.cal.started_at = now
        self.cal.usteps_since_change = 0.0
        self.cal.last_reading = None
        self.cal.pending = False
        self.mode = Mode.CALIBRATING
        self.es.reset()
        self.pi.reset()

    def request_recalibration(self) -> CalibrationState:
        """Online calibration request; runs only without a throttle command."""
        if self.setpoint > 0 or self.mode != Mode.RUN:
            self.cal.pending = True
            self.cal.phase = "deferred"
        else:
            self.start_calibration(self.sched.now, "idle_recal")
        return self.cal

    def _calibration_step(self, raw_t: int, now: int) -> None:
        c = self.cal
        cfg = self.cfg
        if c.phase == "idle_recal" and self.setpoint > 0:
            # throttle command arrived: postpone, keep the old offset
            c.phase = "deferred"
            c.pending = True
            self._finish_calibration(now, keep=True)
            return
        if now - c.started_at > cfg.cal_budget_us:
            c.phase = "failed"
            self._degrade()
            self._finish_calibration(now, keep=True)
            return
        if c.last_reading is None or raw_t != c.last_reading:
            c.last_reading = raw_t
            c.usteps_since_change = 0.0
        elif c.usteps_since_change >= cfg.stall_usteps:
            # commanded motion without measured change: lower stop reached
            c.offset_tenths = raw_t
            c.phase = "done"
            self._finish_calibration(now)
            return
        # three-point action: close fast outside the dead band, creep inside,
        # hold once the stop is found
        y = raw_t - c.offset_tenths
        speed = cfg.cal_fast_pct_s if y > cfg.cal_deadband_pct * 10 else cfg.cal_slow_pct_s
        u = -speed * self.usteps_per_pct
        c.usteps_since_change += abs(u) * cfg.control_period_us * 1e-6
        self._emit(u, True)

    def _finish_calibration(self, now: int, keep: bool = False) -> None:
        c = self.cal
        c.finished_at = now
        c.runs += 1
        self.mode = Mode.RUN
        self.pi.reset()
        y = (c.last_reading if c.last_reading is not None else 0) - c.offset_tenths
        self.fb.fill(y)
        self.fs.reset(self.setpoint, y)
        self.y_filt = y / 10.0
        self._emit(0.0, True)

    # -- status -------------------------------------------------------------

    def status_flags(self) -> int:
        f = CAUSE_BITS.get(self.failsafe.cause, 0)
        if self.failsafe.state == "degraded":
            f |= FLAG_DEGRADED
        if self.es.active:
            f |= FLAG_PARKED
        if self.failsafe.state == "failed":
            f |= FLAG_FAILED
        return f

    def emit_status(self) -> BusFrame | None:
        if self.dead:
            return None
        pos = min(max(self.y_tenths, 0), 1000)
        frame = make_frame(ID_TVA_STATUS, pos, self.counter, self.status_flags(), self.sched.now)
        self.counter = (self.counter + 1) % 16
        if self.bus is not None:
            self.bus.transmit(frame)
        if self.failsafe.safe_action == "ignition_interrupt":
            self._send_error_report()
        return frame

    def _send_error_report(self) -> None:
        if self.bus is None or self.dead:
            return
        pos = min(max(self.y_tenths, 0), 1000)
        self.bus.transmit(make_frame(ID_TVA_ERROR, pos, self.err_counter, self.status_flags()))
        self.err_counter = (self.err_counter + 1) % 16

    def start(self, at: int = 0) -> None:
        if self.mode == Mode.CALIBRATING:
            self.start_calibration(at, "startup")
        self.sched.every(self.cfg.control_period_us, self.control_tick, start=at, label="tva-ctl")
        self.sched.every(self.cfg.status_period_us, self.emit_status, start=at, label="tva-status")
