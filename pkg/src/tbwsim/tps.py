"""Throttle position sensor ECU: calibration, angle decode, plausibility checks
and the 50 Hz position message."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

from . import amr
from .amr import AdcConfig, BridgeFault, BridgePair, BridgeParams
from .can_bus import (ID_TPS, ID_TVA_ERROR, ID_TVA_STATUS, NODE_TPS, BusFrame, CanBus,
                      Freshness, FreshnessMonitor, make_frame)
from .plant import IgnitionLine
from .sim_core import PercentPosition, Scheduler, Streams

# value range limits of the differential bridge (offset + amplitude + noise)
RANGE_LIMIT_V = float(sum(Fraction(str(v)) for v in (amr.O_DIFF_MAX, amr.A_DIFF_MAX, amr.V_NOISE)))
RADIUS_TOL = 0.025
MAX_ANGLE_ERR_DEG = 1.48
DELTA_SIN_MAX = 0.26

USABLE_DEG = 148.0
# decoded angles above this belong below idle (the unused 32 deg straddle the wrap)
WRAP_DEG = USABLE_DEG + (180.0 - USABLE_DEG) / 2.0

ERR_RANGE = 0x01
ERR_MAGNITUDE = 0x02
ERR_REDUNDANCY = 0x04
ERR_SATURATION = 0x08
ERR_CALIBRATION = 0x10
ERR_TVA_LOST = 0x20
ERR_IGNITION_CUT = 0x40
ERR_PERSISTENT = 0x80
ERR_SENSOR_MASK = ERR_RANGE | ERR_MAGNITUDE | ERR_REDUNDANCY | ERR_SATURATION | ERR_CALIBRATION

DEBOUNCE_CYCLES = 5


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True)
class ChannelCalibration:
    max_v: float
    min_v: float

    @property
    def amplitude(self) -> float:
        return (self.max_v - self.min_v) / 2.0

    @property
    def offset(self) -> float:
        return (self.max_v + self.min_v) / 2.0


@dataclass(frozen=True)
class CalibrationRecord:
    sin: ChannelCalibration
    cos: ChannelCalibration

    def to_dict(self) -> dict:
        return {"sin": [self.sin.max_v, self.sin.min_v], "cos": [self.cos.max_v, self.cos.min_v]}

    @classmethod
    def from_dict(cls, d: dict) -> "CalibrationRecord":
        return cls(ChannelCalibration(*d["sin"]), ChannelCalibration(*d["cos"]))


def calibrate(sweep: Sequence[BridgePair], min_amplitude: float = 0.5) -> CalibrationRecord:
    """End-of-line calibration from a full-travel sweep.

    Rejects sweeps that do not reach both extremes of both channels: the
    amplitude must clear ``min_amplitude`` and every recorded point must land
    on the unit circle within the magnitude tolerance once normalized.
    """
    if len(sweep) < 4:
        raise CalibrationError("sweep too short")
    s = [p.sin_v for p in sweep]
    c = [p.cos_v for p in sweep]
    rec = CalibrationRecord(ChannelCalibration(max(s), min(s)), ChannelCalibration(max(c), min(c)))
    for name, ch in (("sin", rec.sin), ("cos", rec.cos)):
        if ch.amplitude < min_amplitude:
            raise CalibrationError(f"{name} amplitude {ch.amplitude:.3f} V below floor")
    worst = max(abs(math.hypot(normalize(p.sin_v, rec.sin), normalize(p.cos_v, rec.cos)) - 1.0)
                for p in sweep)
    if worst > RADIUS_TOL:
        raise CalibrationError(f"sweep does not cover the full signal range (radius error {worst:.3f})")
    return rec


def normalize(raw: float, cal: ChannelCalibration) -> float:
    # not clamped: the magnitude check needs the true value
    return (raw - cal.offset) / cal.amplitude


def decode_angle(sin_n: float, cos_n: float) -> float:
    """Magnet angle in [0, 180) from a normalized pair (bridges run at 2x angle)."""
    a = math.degrees(math.atan2(sin_n, cos_n)) / 2.0
    if a < 0.0:
        a += 180.0
    if a >= 180.0:
        a -= 180.0
    return a


def pulley_angle(alpha_deg: float) -> float:
    """Decoded angle -> pulley angle, idle at 0. Angles past the wrap point are
    read as slightly below idle so the usable window never wraps."""
    return alpha_deg - 180.0 if alpha_deg >= WRAP_DEG else alpha_deg


def pulley_to_position(pulley_deg: float) -> PercentPosition:
    return PercentPosition.from_percent(pulley_deg / USABLE_DEG * 100.0)


def angle_diff(a: float, b: float) -> float:
    """Signed difference on the 180 deg circle."""
    return (a - b + 90.0) % 180.0 - 90.0


@dataclass
class PlausibilityStatus:
    range_fault: bool = False
    magnitude_fault: bool = False
    redundancy_fault: bool = False
    saturation_fault: bool = False
    worst_angular_error: float = 0.0
    # which redundancy rule tripped
    redundancy_angle: bool = False
    redundancy_signal: bool = False
    radius_a: float = 1.0
    radius_b: float = 1.0

    @property
    def any(self) -> bool:
        return self.range_fault or self.magnitude_fault or self.redundancy_fault or self.saturation_fault

    @property
    def flags(self) -> int:
        return ((ERR_RANGE if self.range_fault else 0)
                | (ERR_MAGNITUDE if self.magnitude_fault else 0)
                | (ERR_REDUNDANCY if self.redundancy_fault else 0)
                | (ERR_SATURATION if self.saturation_fault else 0))


def plausibility(pair_a: tuple[float, float], pair_b: tuple[float, float],
                 raw_diff: tuple[float, float] | float, saturated: bool = False) -> PlausibilityStatus:
    """Checks on normalized ``(sin, cos)`` pairs of the differential (a) and
    single-ended (b) bridge, plus the raw differential voltages."""
    st = PlausibilityStatus(saturation_fault=bool(saturated))
    raws = (raw_diff,) if isinstance(raw_diff, (int, float)) else tuple(raw_diff)
    st.range_fault = any(v < -RANGE_LIMIT_V or v > RANGE_LIMIT_V for v in raws)

    st.radius_a = math.hypot(*pair_a)
    st.radius_b = math.hypot(*pair_b)
    st.magnitude_fault = abs(st.radius_a - 1.0) > RADIUS_TOL or abs(st.radius_b - 1.0) > RADIUS_TOL

    err = abs(angle_diff(decode_angle(*pair_a), decode_angle(*pair_b)))
    st.worst_angular_error = err
    st.redundancy_angle = err > MAX_ANGLE_ERR_DEG
    st.redundancy_signal = (abs(pair_a[0] - pair_b[0]) > DELTA_SIN_MAX
                            or abs(pair_a[1] - pair_b[1]) > DELTA_SIN_MAX)
    st.redundancy_fault = st.redundancy_angle or st.redundancy_signal
    return st


@dataclass
class TpsConfig:
    diff_bridge: BridgeParams = field(default_factory=amr.nominal_differential)
    se_bridge: BridgeParams = field(default_factory=amr.nominal_single_ended)
    diff_adc: AdcConfig = field(default_factory=lambda: AdcConfig(oversampling=8, differential=True))
    se_adc: AdcConfig = field(default_factory=lambda: AdcConfig(oversampling=8, differential=False))
    mount_offset_deg: float = 0.0
    period_us: int = 20_000
    eol_step_deg: float = 0.5
    min_amplitude_diff: float = 1.0
    min_amplitude_se: float = 0.5
    tva_grace_us: int = 100_000

    @classmethod
    def from_dict(cls, d: dict | None) -> "TpsConfig":
        d = dict(d or {})
        kw = {}
        if "diff_bridge" in d:
            kw["diff_bridge"] = BridgeParams.from_dict(d.pop("diff_bridge"))
        if "se_bridge" in d:
            kw["se_bridge"] = BridgeParams.from_dict(d.pop("se_bridge"))
        if "diff_adc" in d:
            kw["diff_adc"] = AdcConfig(**{"differential": True, **d.pop("diff_adc")})
        if "se_adc" in d:
            kw["se_adc"] = AdcConfig(**{"differential": False, **d.pop("se_adc")})
        kw.update(d)
        return cls(**kw)


@dataclass
class TpsSample:
    alpha_a: float
    alpha_b: float
    status: PlausibilityStatus


@dataclass
class TpsMessage:
    position: int
    counter: int
    error_status: int


class TpsNode:
    """Sensor ECU. ``pulley`` gives the true pulley angle (deg) at a time (us)."""

    def __init__(self, cfg: TpsConfig, streams: Streams, pulley: Callable[[int], float],
                 sched: Scheduler | None = None, bus: CanBus | None = None,
                 ignition: IgnitionLine | None = None,
                 calibration: tuple[CalibrationRecord, CalibrationRecord] | None = None):
        self.cfg = cfg
        self.pulley = pulley
        self.sched = sched
        self.bus = bus
        self.ignition = ignition or IgnitionLine()
        self.rng_a = streams["tps.bridge_a"]
        self.rng_b = streams["tps.bridge_b"]
        self.rng_adc = streams["tps.adc"]
        self.faults: dict[str, BridgeFault] = {}
        self.counter = 0
        self.last_good = 0
        self.bad_cycles = 0
        self.tva_monitor = FreshnessMonitor()
        self.tva_error_report = False
        self.log: list[tuple] = []
        self.false_faults = 0
        self.cal_ok = True
        if calibration is None:
            try:
                calibration = self.run_eol_calibration()
            except CalibrationError:
                self.cal_ok = False
                calibration = (calibrate_ideal(cfg.diff_bridge), calibrate_ideal(cfg.se_bridge))
        self.cal_a, self.cal_b = calibration
        if bus is not None:
            bus.subscribe(NODE_TPS, self.on_frame)

    # -- front end ----------------------------------------------------------

    def _read_pair(self, alpha: float, params: BridgeParams, adc: AdcConfig, rng, key: str,
                   hours: float) -> tuple[float, float, bool]:
        pair = amr.bridge_outputs(alpha, params, rng, self.faults.get(key), hours)
        rs = amr.adc_sample(pair.sin_v, adc, self.rng_adc)
        rc = amr.adc_sample(pair.cos_v, adc, self.rng_adc)
        return adc.to_volts(rs.counts), adc.to_volts(rc.counts), rs.saturated or rc.saturated

    def read_volts(self, pulley_deg: float, hours: float = 0.0):
        alpha = pulley_deg + self.cfg.mount_offset_deg
        a = self._read_pair(alpha, self.cfg.diff_bridge, self.cfg.diff_adc, self.rng_a, "a", hours)
        b = self._read_pair(alpha, self.cfg.se_bridge, self.cfg.se_adc, self.rng_b, "b", hours)
        return a, b

    def run_eol_calibration(self) -> tuple[CalibrationRecord, CalibrationRecord]:
        """Sweep the whole usable travel and extract amplitude/offset per channel."""
        n = int(round(USABLE_DEG / self.cfg.eol_step_deg))
        sweep_a, sweep_b = [], []
        for i in range(n + 1):
            (sa, ca, _), (sb, cb, _) = self.read_volts(i * USABLE_DEG / n)
            sweep_a.append(BridgePair(sa, ca, amr.DIFFERENTIAL))
            sweep_b.append(BridgePair(sb, cb, amr.SINGLE_ENDED))
        return (calibrate(sweep_a, self.cfg.min_amplitude_diff),
                calibrate(sweep_b, self.cfg.min_amplitude_se))

    def set_fault(self, bridge: str, fault: BridgeFault | None) -> None:
        """Inject a fault on bridge ``a`` (differential) or ``b`` (single-ended)."""
        if fault is None:
            self.faults.pop(bridge, None)
        else:
            self.faults[bridge] = fault

    # -- processing ---------------------------------------------------------

    def sample(self, pulley_deg: float, hours: float = 0.0) -> TpsSample:
        (sa, ca, sat_a), (sb, cb, sat_b) = self.read_volts(pulley_deg, hours)
        na = (normalize(sa, self.cal_a.sin), normalize(ca, self.cal_a.cos))
        nb = (normalize(sb, self.cal_b.sin), normalize(cb, self.cal_b.cos))
        st = plausibility(na, nb, (sa, ca), sat_a or sat_b)
        return TpsSample(decode_angle(*na), decode_angle(*nb), st)

    def measure_angle(self, pulley_deg: float) -> float:
        """Open-loop measurement mode: full-precision pulley angle."""
        return pulley_angle(self.sample(pulley_deg).alpha_a) - self.cfg.mount_offset_deg

    def tick(self) -> TpsMessage | None:
        now = self.sched.now if self.sched is not None else 0
        if self.bus is not None and self.bus.node_dead(NODE_TPS, now):
            return None
        true_deg = self.pulley(now)
        s = self.sample(true_deg, now / 3.6e9)
        flags = s.status.flags | (0 if self.cal_ok else ERR_CALIBRATION)
        pos = pulley_to_position(pulley_angle(s.alpha_a) - self.cfg.mount_offset_deg).tenths
        if flags:
            self.bad_cycles += 1
            pos = self.last_good
        else:
            self.bad_cycles = 0
            self.last_good = pos
        if self.bad_cycles >= DEBOUNCE_CYCLES:
            flags |= ERR_PERSISTENT

        if self.bus is not None and now >= self.cfg.tva_grace_us:
            if self.tva_monitor.poll(now) != Freshness.FRESH:
                flags |= ERR_TVA_LOST
                self.ignition.cut(now)
        if self.tva_error_report:
            self.ignition.cut(now)
        if not self.ignition.on:
            flags |= ERR_IGNITION_CUT

        msg = TpsMessage(pos, self.counter, flags)
        self.log.append((now, true_deg, s.alpha_a, pos, flags))
        if self.bus is not None:
            self.bus.transmit(make_frame(ID_TPS, pos, self.counter, flags))
        self.counter = (self.counter + 1) % 16
        return msg

    def on_frame(self, frame: BusFrame) -> None:
        now = self.sched.now if self.sched is not None else frame.timestamp
        if frame.id == ID_TVA_STATUS:
            _, cnt, _ = frame.fields
            self.tva_monitor.on_frame(cnt, now)
        elif frame.id == ID_TVA_ERROR:
            self.tva_error_report = True
            self.ignition.cut(now)

    def start(self, at: int = 0) -> None:
        self.sched.every(self.cfg.period_us, self.tick, start=at, label="tps")


def calibrate_ideal(params: BridgeParams) -> CalibrationRecord:
    """Datasheet-nominal calibration, used when no sweep is available."""
    s, c = params.sin, params.cos
    return CalibrationRecord(ChannelCalibration(s.offset + s.amplitude, s.offset - s.amplitude),
                             ChannelCalibration(c.offset + c.amplitude, c.offset - c.amplitude))
