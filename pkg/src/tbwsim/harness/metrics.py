"""Scenario metrics. Every function here is a pure function of trace columns,
so recomputing a report from an exported CSV gives the same numbers."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

SIGNAL_COLUMNS = ("time_us", "stimulus_pct", "setpoint_pct", "feedback_pct", "valve_pct",
                  "rpm", "enabled", "mode", "failsafe", "tps_err", "ignition", "fault_active")
INT_COLUMNS = frozenset(("time_us", "enabled", "mode", "failsafe", "tps_err", "ignition",
                         "fault_active"))
SWEEP_COLUMNS = ("index", "reference_deg", "measured_deg", "deviation_deg")

MODE_CODES = {"calibrating": 0, "run": 1, "idle_return": 2, "failed": 3}
FAILSAFE_CODES = {"ok": 0, "degraded": 1, "failed": 2}

SETTLE_BAND_PCT = 0.5
DIGITS = 9  # positions sit on a 0.1 % grid; drop the float residue of /10
TAIL_US = 100_000
MIN_PLATEAU_US = 100_000
HALL_LSB_PCT = 0.022 / 69.0 * 100.0

DEFINITIONS = {
    "settling_time_ms": "stimulus step edge to the start of the final stretch with "
                        "|feedback - target| <= 0.5 percentage points; worst step",
    "overshoot_pct": "largest feedback excursion beyond the target in the step direction; worst step",
    "steady_error_pct": "largest |feedback - target| in the last 100 ms of each plateau",
    "ramp_lag_ms": "time between received setpoint and feedback crossing the same level "
                   "(5 % grid) on ramps; worst level",
    "dead_time_ms": "stimulus motion onset after a >= 100 ms plateau to the first valve "
                    "motion of one Hall LSB (0.022 deg) in the same direction; worst onset",
    "max_deviation_pct": "sweep: centered moving-average corrected |measured - reference| "
                         "as percent of the 148 deg range; closed loop: largest "
                         "|feedback - setpoint| at plateau ends",
    "overall_error_pct": "largest |true valve - stimulus| in the last 100 ms of plateaus",
    "setpoint_accuracy_pct": "largest |feedback - setpoint| at the last sample of each "
                             "stimulus plateau",
    "band_accuracy_pct": "100 - largest |feedback - setpoint| at plateau ends, grouped "
                         "by engine speed thirds between idle and maximum rpm",
    "fault_detection_latency_ms": "first fault-active sample to the first sample in "
                                  "idle return, failed mode or with ignition cut",
    "false_fault_count": "rising edges of any fault indication (TPS error flags, TVA "
                         "degraded/failed, idle return, ignition cut) while no fault is injected",
}


@dataclass
class MetricsReport:
    settling_time_ms: float = 0.0
    overshoot_pct: float = 0.0
    steady_error_pct: float = 0.0
    dead_time_ms: float = 0.0
    max_deviation_pct: float = 0.0
    fault_detection_latency_ms: float | None = None
    false_fault_count: int = 0
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class StepResult:
    t_edge_us: int
    start_pct: float
    target_pct: float
    settling_ms: float
    overshoot_pct: float
    steady_error_pct: float


def plateaus(t: Sequence[float], x: Sequence[float], min_us: int = MIN_PLATEAU_US) -> list[tuple[int, int]]:
    """Index ranges ``[i, j]`` (inclusive) where ``x`` is constant for at least ``min_us``."""
    out = []
    i = 0
    n = len(x)
    while i < n:
        j = i
        while j + 1 < n and x[j + 1] == x[i]:
            j += 1
        if t[j] - t[i] >= min_us:
            out.append((i, j))
        i = j + 1
    return out


def step_responses(t, ref, y, band: float = SETTLE_BAND_PCT, tail_us: int = TAIL_US) -> list[StepResult]:
    """Responses to single-sample jumps of ``ref`` between two plateaus."""
    runs = plateaus(t, ref)
    out = []
    for (a0, a1), (b0, b1) in zip(runs, runs[1:]):
        if b0 != a1 + 1:
            continue  # not a jump (ramp in between)
        start, target = ref[a1], ref[b0]
        sign = 1.0 if target > start else -1.0
        settle_at = t[b0]
        for k in range(b0, b1 + 1):
            if abs(y[k] - target) > band:
                settle_at = t[k + 1] if k < b1 else t[b1]
        over = round(max(0.0, max(sign * (y[k] - target) for k in range(b0, b1 + 1))), DIGITS)
        tail = [round(abs(y[k] - target), DIGITS) for k in range(b0, b1 + 1) if t[k] >= t[b1] - tail_us]
        out.append(StepResult(int(t[b0]), start, target, (settle_at - t[b0]) / 1000.0,
                              over, max(tail)))
    return out


def plateau_tail_errors(t, ref, a, b, tail_us: int = TAIL_US) -> list[tuple[int, float]]:
    """``(index, |a - b|)`` for samples in the last ``tail_us`` of plateaus of ``ref``."""
    out = []
    for i, j in plateaus(t, ref):
        for k in range(i, j + 1):
            if t[k] >= t[j] - tail_us:
                out.append((k, round(abs(a[k] - b[k]), DIGITS)))
    return out


def plateau_end_errors(t, ref, a, b) -> list[tuple[int, float]]:
    """``(index, |a - b|)`` at the last sample of each plateau of ``ref``."""
    return [(j, round(abs(a[j] - b[j]), DIGITS)) for _, j in plateaus(t, ref)]


def ramp_segments(t, ref, min_changes: int = 5, gap_us: int = MIN_PLATEAU_US) -> list[tuple[int, int]]:
    """Monotone runs of a staircase signal made of at least ``min_changes`` steps."""
    changes = [k for k in range(1, len(ref)) if ref[k] != ref[k - 1]]
    segs = []
    cur: list[int] = []
    for k in changes:
        d = 1 if ref[k] > ref[k - 1] else -1
        if cur:
            pk = cur[-1]
            pd = 1 if ref[pk] > ref[pk - 1] else -1
            if d != pd or t[k] - t[pk] > gap_us:
                segs.append(cur)
                cur = []
        cur.append(k)
    if cur:
        segs.append(cur)
    return [(s[0] - 1, s[-1]) for s in segs if len(s) >= min_changes]


def _first_crossing(t, x, level, rising, start):
    for k in range(start, len(x)):
        if (x[k] >= level) if rising else (x[k] <= level):
            return k
    return None


def ramp_lag_ms(t, ref, y, grid: float = 5.0) -> float:
    """Worst lag of ``y`` behind ``ref`` at level crossings along ramps."""
    worst = 0.0
    for i, j in ramp_segments(t, ref):
        lo, hi = sorted((ref[i], ref[j]))
        rising = ref[j] > ref[i]
        level = math.floor(lo / grid) * grid + grid
        while level < hi - 1e-9:
            kr = _first_crossing(t, ref, level, rising, i)
            ky = _first_crossing(t, y, level, rising, i)
            if kr is not None:
                lag = (t[ky] - t[kr]) / 1000.0 if ky is not None else math.inf
                worst = max(worst, lag)
            level += grid
    return worst


def dead_time_ms(t, stim, valve, lsb_pct: float = HALL_LSB_PCT, min_change_pct: float = 1.0) -> float:
    """Worst delay from a stimulus motion onset to valve motion."""
    worst = 0.0
    for _, j in plateaus(t, stim):
        i = j + 1
        if i >= len(stim) or t[-1] - t[i] < 200_000:
            continue  # onset too close to the end of the trace to judge
        d = 1.0 if stim[i] > stim[j] else -1.0
        # ignore onsets whose excursion stays below min_change_pct
        k = i
        while k < len(stim) and t[k] - t[i] < 200_000 and d * (stim[k] - stim[j]) < min_change_pct:
            k += 1
        if k >= len(stim) or d * (stim[k] - stim[j]) < min_change_pct:
            continue
        v0 = valve[j]
        for m in range(i, len(valve)):
            if d * (valve[m] - v0) >= lsb_pct:
                worst = max(worst, (t[m] - t[j]) / 1000.0)
                break
        else:
            worst = math.inf
    return worst


def band_accuracy(t, stim, setpoint, feedback, rpm, idle_rpm: float, max_rpm: float) -> dict:
    """Accuracy (100 - worst error) at plateau ends per engine speed third."""
    edges = (idle_rpm + (max_rpm - idle_rpm) / 3.0, idle_rpm + 2.0 * (max_rpm - idle_rpm) / 3.0)
    worst = {"low": None, "mid": None, "high": None}
    for k, err in plateau_end_errors(t, stim, feedback, setpoint):
        band = "low" if rpm[k] < edges[0] else ("mid" if rpm[k] < edges[1] else "high")
        worst[band] = err if worst[band] is None else max(worst[band], err)
    return {b: (None if e is None else round(100.0 - e, DIGITS)) for b, e in worst.items()}


def _unhealthy(cols, k) -> bool:
    return (cols["tps_err"][k] != 0 or cols["failsafe"][k] != 0 or cols["ignition"][k] == 0
            or cols["mode"][k] in (MODE_CODES["idle_return"], MODE_CODES["failed"]))


def false_fault_count(cols: Mapping[str, Sequence[float]]) -> int:
    n = 0
    prev = False
    for k in range(len(cols["time_us"])):
        bad = _unhealthy(cols, k)
        if bad and not prev and cols["fault_active"][k] == 0:
            n += 1
        prev = bad
    return n


def _detected(cols, k) -> bool:
    return (cols["ignition"][k] == 0
            or cols["mode"][k] in (MODE_CODES["idle_return"], MODE_CODES["failed"]))


def fault_latency_ms(cols: Mapping[str, Sequence[float]]) -> float | None:
    """None without an injected fault, inf if the fault went unnoticed."""
    t = cols["time_us"]
    fa = cols["fault_active"]
    start = next((k for k in range(len(t)) if fa[k] != 0), None)
    if start is None:
        return None
    for k in range(start, len(t)):
        if _detected(cols, k):
            return (t[k] - t[start]) / 1000.0
    return math.inf


def sweep_correction(dev: Sequence[float], window: int) -> list[float]:
    """Centered moving average; only indices with a full window are kept."""
    if window <= 1:
        return list(dev)
    h = window // 2
    out = []
    for k in range(h, len(dev) - (window - 1 - h)):
        out.append(math.fsum(dev[k - h:k - h + window]) / window)
    return out


def sweep_metrics(cols: Mapping[str, Sequence[float]], window: int, span_deg: float = 148.0) -> MetricsReport:
    dev = cols["deviation_deg"]
    corr = sweep_correction(dev, window)
    raw_max = max(abs(d) for d in dev) if dev else 0.0
    corr_max = max(abs(d) for d in corr) if corr else 0.0
    return MetricsReport(
        max_deviation_pct=corr_max / span_deg * 100.0,
        extras={"raw_deviation_pct": raw_max / span_deg * 100.0,
                "max_deviation_deg": corr_max, "samples": len(dev), "window": window})


def closed_loop_metrics(cols: Mapping[str, Sequence[float]], idle_rpm: float = 2000.0,
                        max_rpm: float = 9000.0) -> MetricsReport:
    t = cols["time_us"]
    stim = cols["stimulus_pct"]
    w = cols["setpoint_pct"]
    y = cols["feedback_pct"]
    valve = cols["valve_pct"]
    steps = step_responses(t, stim, y)
    tail = plateau_tail_errors(t, stim, valve, stim)
    ends = plateau_end_errors(t, stim, y, w)
    rep = MetricsReport(
        settling_time_ms=max((s.settling_ms for s in steps), default=0.0),
        overshoot_pct=max((s.overshoot_pct for s in steps), default=0.0),
        steady_error_pct=max((s.steady_error_pct for s in steps), default=0.0),
        dead_time_ms=dead_time_ms(t, stim, valve),
        max_deviation_pct=max((e for _, e in ends), default=0.0),
        fault_detection_latency_ms=fault_latency_ms(cols),
        false_fault_count=false_fault_count(cols),
    )
    rep.extras = {
        "steps": len(steps),
        "ramp_lag_ms": ramp_lag_ms(t, w, y),
        "tps_lag_ms": ramp_lag_ms(t, stim, w),
        "overall_error_pct": max((e for _, e in tail), default=0.0),
        "setpoint_accuracy_pct": max((e for _, e in ends), default=0.0),
        "setpoints": len(ends),
        "band_accuracy_pct": band_accuracy(t, stim, w, y, cols["rpm"], idle_rpm, max_rpm),
    }
    return rep


def matrix_metrics(cols: Mapping[str, Sequence], latency_limit_ms: float) -> MetricsReport:
    """Fault matrix score: a case passes when the fault was detected within
    ``latency_limit_ms`` and the run ended with the driver disabled and a
    safe action (ignition interrupt or idle return) taken."""
    n = len(cols["fault"])
    lat = list(cols["latency_ms"])
    detected = sum(1 for d in cols["detect_us"] if d >= 0)
    in_time = sum(1 for x in lat if x <= latency_limit_ms)
    safe = sum(1 for k in range(n)
               if cols["driver_disabled"][k] and cols["safe_action"][k] != "none")
    passed = sum(1 for k in range(n)
                 if lat[k] <= latency_limit_ms and cols["driver_disabled"][k]
                 and cols["safe_action"][k] != "none")
    per_class: dict = {}
    for k in range(n):
        f = cols["fault"][k]
        per_class[f] = max(per_class.get(f, 0.0), lat[k])
    return MetricsReport(
        fault_detection_latency_ms=max(lat) if lat else None,
        extras={"cases": n, "detected": detected, "within_limit": in_time, "safe_state": safe,
                "passed": passed, "latency_limit_ms": latency_limit_ms,
                "latency_by_class_ms": per_class})
