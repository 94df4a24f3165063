"""Redundant AMR bridge signal model and the ADC front end.

Each bridge produces a sine/cosine pair of the doubled magnet angle::

    sin_v = A_Y * sin(2a) + O_Y
    cos_v = A_X * cos(2a + phase) + O_X

The cosine channel really is a cosine: the magnitude check relies on the two
channels being a quarter period apart.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .sim_core import RngStream

DIFFERENTIAL = "differential"
SINGLE_ENDED = "single_ended"

# manufacturer envelope for the differential bridge
O_DIFF_MAX = 0.200
A_DIFF_MAX = 2.600
V_NOISE = 0.005


@dataclass(frozen=True)
class ChannelParams:
    amplitude: float
    offset: float


@dataclass(frozen=True)
class BridgeParams:
    """Amplitude/offset per channel plus the noise bound ``noise_v`` (3 sigma).

    ``phase_deg`` is the orthogonality error of the cosine channel and
    ``amp_drift_per_h`` an optional linear amplitude drift (fraction per
    simulated hour); both default to zero.
    """

    sin: ChannelParams
    cos: ChannelParams
    noise_v: float = V_NOISE
    phase_deg: float = 0.0
    amp_drift_per_h: float = 0.0
    kind: str = DIFFERENTIAL

    def check_envelope(self) -> None:
        if self.kind != DIFFERENTIAL:
            return
        for ch in (self.sin, self.cos):
            if abs(ch.offset) > O_DIFF_MAX + 1e-12 or ch.amplitude > A_DIFF_MAX + 1e-12:
                raise ValueError(f"differential bridge outside datasheet envelope: {ch}")

    @classmethod
    def ideal(cls, amplitude=1.0, offset=0.0, kind=DIFFERENTIAL) -> "BridgeParams":
        ch = ChannelParams(amplitude, offset)
        return cls(ch, ch, noise_v=0.0, kind=kind)

    @classmethod
    def from_dict(cls, d: dict) -> "BridgeParams":
        d = dict(d)
        sin = ChannelParams(**d.pop("sin"))
        cos = ChannelParams(**d.pop("cos"))
        return cls(sin=sin, cos=cos, **d)

    def to_dict(self) -> dict:
        return {
            "sin": {"amplitude": self.sin.amplitude, "offset": self.sin.offset},
            "cos": {"amplitude": self.cos.amplitude, "offset": self.cos.offset},
            "noise_v": self.noise_v, "phase_deg": self.phase_deg,
            "amp_drift_per_h": self.amp_drift_per_h, "kind": self.kind,
        }


def nominal_differential() -> BridgeParams:
    return BridgeParams(ChannelParams(2.4, 0.05), ChannelParams(2.35, -0.04), kind=DIFFERENTIAL)


def nominal_single_ended() -> BridgeParams:
    return BridgeParams(ChannelParams(1.2, 1.65), ChannelParams(1.18, 1.66), kind=SINGLE_ENDED)


@dataclass(frozen=True)
class BridgePair:
    sin_v: float
    cos_v: float
    bridge: str = DIFFERENTIAL


@dataclass
class BridgeFault:
    """Per-bridge output override.

    ``mode`` is one of ``short`` (both channels forced to ``value`` volts),
    ``open`` (floating input read as ``value``), ``offset`` (adds ``value`` to
    the sine channel), ``angle`` (adds ``value`` degrees to the magnet angle
    seen by this bridge only) or ``scale`` (multiplies the AC part by
    ``value``).
    """

    mode: str
    value: float = 0.0


def bridge_outputs(alpha_deg: float, params: BridgeParams, rng: RngStream | None = None,
                   fault: BridgeFault | None = None, hours: float = 0.0) -> BridgePair:
    if fault is not None and fault.mode in ("short", "open"):
        return BridgePair(fault.value, fault.value, params.kind)
    a = alpha_deg
    if fault is not None and fault.mode == "angle":
        a += fault.value
    two_a = math.radians(2.0 * a)
    gain = 1.0 + params.amp_drift_per_h * hours
    if fault is not None and fault.mode == "scale":
        gain *= fault.value
    s = params.sin.amplitude * gain * math.sin(two_a) + params.sin.offset
    c = params.cos.amplitude * gain * math.cos(two_a + math.radians(params.phase_deg)) + params.cos.offset
    if fault is not None and fault.mode == "offset":
        s += fault.value
    if rng is not None and params.noise_v > 0.0:
        # Gaussian with 3 sigma at the noise bound, truncated at the bound
        n = np.clip(rng.normal(params.noise_v / 3.0, 2), -params.noise_v, params.noise_v)
        s += float(n[0])
        c += float(n[1])
    return BridgePair(s, c, params.kind)


@dataclass(frozen=True)
class AdcConfig:
    """12-bit converter. Differential mode spans ``[-vref, +vref]``, single-ended
    ``[0, vref]``. ``noise_lsb`` is the converter's own input-referred noise."""

    resolution: int = 12
    oversampling: int = 8
    t_s_cycles: Fraction = Fraction(1281, 2)
    clock_cycles_per_us: int = 52
    vref: float = 3.3
    differential: bool = True
    noise_lsb: float = 0.0
    quantize: bool = True

    def __post_init__(self):
        if self.resolution != 12:
            raise ValueError("only 12-bit conversion is modeled")
        n = self.oversampling
        if n < 1 or n & (n - 1):
            raise ValueError("oversampling must be a power of two")

    @property
    def full_scale(self) -> int:
        return (1 << self.resolution) - 1

    @property
    def v_min(self) -> float:
        return -self.vref if self.differential else 0.0

    @property
    def v_span(self) -> float:
        return 2.0 * self.vref if self.differential else self.vref

    def to_volts(self, counts: float) -> float:
        return self.v_min + counts * self.v_span / self.full_scale


@dataclass
class AdcResult:
    counts: float
    saturated: bool


def adc_sample(v: float, cfg: AdcConfig, rng: RngStream | None = None) -> AdcResult:
    """Convert ``oversampling`` times and average. Inputs outside the converter
    span clamp to the rail code and raise the saturation flag."""
    fs = cfg.full_scale
    x = (v - cfg.v_min) / cfg.v_span * fs
    saturated = x < 0.0 or x > fs
    n = cfg.oversampling
    if rng is not None and cfg.noise_lsb > 0.0:
        xs = x + rng.normal(cfg.noise_lsb, n)
    else:
        xs = np.full(n, x)
    if cfg.quantize:
        codes = np.clip(np.floor(xs + 0.5), 0, fs)
    else:
        codes = np.clip(xs, 0, fs)
    return AdcResult(float(codes.mean()), bool(saturated))


@dataclass(frozen=True)
class ConversionBudget:
    t_max_us: Fraction
    budget_cycles: Fraction
    used_cycles: Fraction
    ok: bool


def conversion_budget(range_deg, omega_max_deg_per_ms, cfg: AdcConfig) -> ConversionBudget:
    """Worst-case ADC time budget for a pulley sweeping ``range_deg`` at
    ``omega_max``: the conversion must finish before the angle moves 1 % of
    range. Exact rational arithmetic; returns microseconds and CPU cycles."""
    omega = Fraction(omega_max_deg_per_ms)
    if omega <= 0:
        raise ValueError("omega_max must be positive")
    # deg / (deg/ms) = ms; * 1000 -> us
    t_max = Fraction(range_deg) / (100 * omega) * 1000
    t_max = Fraction(math.floor(t_max))  # whole microseconds, as a timer would hold it
    budget = t_max * cfg.clock_cycles_per_us
    used = (Fraction(cfg.t_s_cycles) + cfg.resolution + Fraction(1, 2)) * cfg.oversampling
    return ConversionBudget(t_max, budget, used, used <= budget)

