"""Assembles sensor ECU, bus, actuator ECU and plant for a scenario, runs it
and scores the resulting traces."""

from __future__ import annotations

import math
import time
from array import array
from dataclasses import dataclass, field

from ..amr import BridgeFault
from ..can_bus import TRACE_COLUMNS, BusFaultPlan, CanBus, FaultKind
from ..plant import IgnitionLine, Plant, PlantParams
from ..sim_core import US_PER_S, Scheduler, Streams
from ..tps import USABLE_DEG, TpsConfig, TpsNode
from ..tva import Mode, TvaConfig, TvaNode
from . import metrics as M
from . import stimulus as S
from .scenario import Scenario

PLANT_FAULTS = ("belt", "motor", "driver")
HALL_FAULTS = {"hall_short_vcc": "short_vcc", "hall_short_gnd": "short_gnd", "hall_open": "open"}
BUS_FAULTS = tuple(k.value for k in FaultKind)
DISTURBANCES = ("load",)


class Trace:
    """Column-oriented table. Numeric columns live in ``array('d')``."""

    def __init__(self, columns, int_columns=frozenset(), text_columns=frozenset(),
                 hex_columns=frozenset()):
        self.columns = tuple(columns)
        self.int_columns = frozenset(int_columns)
        self.text_columns = frozenset(text_columns)
        self.hex_columns = frozenset(hex_columns)
        self.cols = {c: ([] if c in self.text_columns else array("d")) for c in self.columns}

    def append(self, row) -> None:
        for c, v in zip(self.columns, row):
            self.cols[c].append(v)

    def __len__(self):
        return len(self.cols[self.columns[0]])

    def rows(self):
        return zip(*(self.cols[c] for c in self.columns))

    @classmethod
    def from_rows(cls, columns, rows, int_columns=frozenset(), text_columns=frozenset(),
                  hex_columns=frozenset()):
        tr = cls(columns, int_columns, text_columns, hex_columns)
        for r in rows:
            tr.append(r)
        return tr


@dataclass
class RunResult:
    scenario: Scenario
    report: M.MetricsReport
    traces: dict
    checks: list = field(default_factory=list)
    runtime_s: float = 0.0
    diagnostics: dict = field(default_factory=dict)  # not derivable from the traces

    @property
    def passed(self) -> bool:
        return all(ok for _, _, ok in self.checks)


@dataclass
class FaultSpec:
    fault: str
    at_us: int
    end_us: int | None = None
    bridge: str = "a"
    mode: str = "short"
    value: float = 0.0
    ids: tuple = (0x101,)
    ncm: float = 0.0

    @classmethod
    def from_dict(cls, d: dict) -> "FaultSpec":
        d = dict(d)
        fault = d.pop("fault")
        known = PLANT_FAULTS + tuple(HALL_FAULTS) + BUS_FAULTS + DISTURBANCES + ("bridge",)
        if fault not in known:
            raise ValueError(f"unknown fault {fault!r}")
        at = int(round(float(d.pop("at_s")) * US_PER_S))
        end = d.pop("end_s", None)
        end = None if end is None else int(round(float(end) * US_PER_S))
        if "ids" in d:
            d["ids"] = tuple(int(i) for i in d["ids"])
        return cls(fault, at, end, **d)

    def active(self, t: int) -> bool:
        return self.fault not in DISTURBANCES and t >= self.at_us and (self.end_us is None or t <= self.end_us)


class Rig:
    """One closed-loop setup. With ``with_tps`` the sensor ECU reads the
    stimulus as pulley angle; otherwise a rest-bus node sends it directly."""

    def __init__(self, sc: Scenario, stim: S.Stimulus, with_tps: bool, seed: int | None = None,
                 faults: list[FaultSpec] | None = None):
        self.sc = sc
        self.stim = stim
        self.sched = Scheduler()
        self.streams = Streams(sc.seed if seed is None else seed)
        self.bus = CanBus(self.sched, **sc.bus)
        self.ignition = IgnitionLine()
        self.plant = Plant(PlantParams.from_dict(sc.plant), self.streams["plant.hall"],
                           ignition=self.ignition)
        self.tva = TvaNode(TvaConfig.from_dict(sc.tva), self.plant, self.sched, self.bus)
        self.tps = None
        self.restbus = None
        if with_tps:
            self.tps = TpsNode(TpsConfig.from_dict(sc.tps), self.streams,
                               lambda t: stim(t) / 100.0 * USABLE_DEG, self.sched, self.bus,
                               self.ignition)
        else:
            self.restbus = S.RestBusNode(self.sched, self.bus, stim)
        self.faults = list(faults if faults is not None else (FaultSpec.from_dict(f) for f in sc.faults))
        for f in self.faults:
            self._arm(f)
        self.trace = Trace(M.SIGNAL_COLUMNS, M.INT_COLUMNS)

    def _arm(self, f: FaultSpec) -> None:
        if f.fault in BUS_FAULTS:
            rng = self.streams["bus.fault"] if f.fault == FaultKind.CORRUPT.value else None
            self.bus.add_fault(BusFaultPlan(FaultKind(f.fault), f.at_us, f.end_us, f.ids, rng))
            return
        self.sched.schedule(lambda: self._inject(f), f.at_us, f"fault-{f.fault}")
        if f.end_us is not None:
            self.sched.schedule(lambda: self._clear(f), f.end_us, f"clear-{f.fault}")

    def _inject(self, f: FaultSpec) -> None:
        self.plant.advance_to(self.sched.now)
        if f.fault == "belt":
            self.plant.break_belt()
        elif f.fault == "motor":
            self.plant.fail_motor()
        elif f.fault == "driver":
            self.plant.fail_driver()
        elif f.fault in HALL_FAULTS:
            self.plant.set_hall_fault(HALL_FAULTS[f.fault])
        elif f.fault == "bridge":
            if self.tps is None:
                raise ValueError("bridge faults need the sensor ECU in the loop")
            self.tps.set_fault(f.bridge, BridgeFault(f.mode, f.value))
        elif f.fault == "load":
            self.plant.set_load_extra(f.ncm)

    def _clear(self, f: FaultSpec) -> None:
        self.plant.advance_to(self.sched.now)
        if f.fault in HALL_FAULTS:
            self.plant.set_hall_fault(None)
        elif f.fault == "bridge":
            self.tps.set_fault(f.bridge, None)
        elif f.fault == "load":
            self.plant.set_load_extra(0.0)

    def fault_active(self, t: int) -> bool:
        return any(f.active(t) for f in self.faults)

    def _log(self) -> None:
        now = self.sched.now
        p = self.plant
        p.advance_to(now)
        tva = self.tva
        tps_err = self.tps.log[-1][4] if (self.tps is not None and self.tps.log) else 0
        self.trace.append((
            now, self.stim(now), tva.setpoint / 10.0, tva.y_tenths / 10.0, p.valve_pct, p.rpm,
            1 if p.energized else 0, M.MODE_CODES[tva.mode.value],
            M.FAILSAFE_CODES[tva.failsafe.state], tps_err, 1 if self.ignition.on else 0,
            1 if self.fault_active(now) else 0))

    def run(self, duration_us: int) -> None:
        self.tva.start()
        if self.tps is not None:
            self.tps.start()
        else:
            self.restbus.start()
        self.sched.every(self.sc.trace_period_ms * 1000, self._log, label="trace")
        self.sched.run(duration_us)


def bus_trace(bus: CanBus) -> Trace:
    return Trace.from_rows(TRACE_COLUMNS, bus.trace, int_columns=TRACE_COLUMNS, hex_columns=("id",))


def evaluate(sc: Scenario, report: M.MetricsReport) -> list:
    d = report.to_dict()
    out = []
    for chk in sc.check_list:
        value, ok = chk.evaluate(d)
        out.append((chk, value, ok))
    return out


def _duration_us(sc: Scenario, full: bool) -> int:
    dur = sc.full_duration_s if (full and sc.full_duration_s) else sc.duration_s
    return int(round(dur * US_PER_S))


def _rpm_limits(sc: Scenario) -> tuple[float, float]:
    pp = PlantParams.from_dict(sc.plant)
    return pp.idle_rpm, pp.max_rpm


def run_closed_loop(sc: Scenario, with_tps: bool, full: bool = False) -> RunResult:
    t0 = time.perf_counter()
    dur = _duration_us(sc, full)
    streams = Streams(sc.seed)
    stim = S.build(sc.stimulus, streams, base_dir=sc.base_dir)
    rig = Rig(sc, stim, with_tps)
    rig.run(dur)
    report = M.closed_loop_metrics(rig.trace.cols, *_rpm_limits(sc))
    res = RunResult(sc, report, {"signal": rig.trace, "bus": bus_trace(rig.bus)})
    res.diagnostics = {"lost_steps": rig.plant.lost_steps, "stalled_steps": rig.plant.stalled_steps,
                       "bus_frames": rig.bus.sent}
    res.checks = evaluate(sc, report)
    res.runtime_s = time.perf_counter() - t0
    return res


def run_endurance(sc: Scenario, full: bool = False) -> RunResult:
    return run_closed_loop(sc, with_tps=True, full=full)


def run_step_ramp(sc: Scenario, full: bool = False) -> RunResult:
    return run_closed_loop(sc, with_tps=False, full=full)


def run_full_chain(sc: Scenario, full: bool = False) -> RunResult:
    return run_closed_loop(sc, with_tps=True, full=full)


def run_open_loop_sweep(sc: Scenario, full: bool = False) -> RunResult:
    """Stepper rig turns the pulley in fixed steps; the sensor ECU reports
    angles in measurement mode. The rig gearbox adds a periodic error that
    the moving-average correction removes."""
    t0 = time.perf_counter()
    sw = dict(sc.stimulus["sweep"])
    plan = S.SweepPlan(float(sw.get("step_deg", 360.0 / 950.0)), float(sw.get("span_deg", USABLE_DEG)))
    gear_amp = float(sw.get("gear_error_deg", 0.0))
    period = int(sw.get("gear_period", 10))
    window = int(sw.get("correction_window", period))
    streams = Streams(sc.seed)
    tps = TpsNode(TpsConfig.from_dict(sc.tps), streams, lambda t: 0.0)
    trace = Trace(M.SWEEP_COLUMNS, int_columns=("index",))
    for i, ref in enumerate(plan.angles()):
        actual = ref + gear_amp * math.sin(2.0 * math.pi * i / period)
        meas = tps.measure_angle(actual)
        trace.append((i, ref, meas, meas - ref))
    report = M.sweep_metrics(trace.cols, window, plan.span_deg)
    res = RunResult(sc, report, {"sweep": trace})
    res.diagnostics = {"calibrated": tps.cal_ok}
    res.checks = evaluate(sc, report)
    res.runtime_s = time.perf_counter() - t0
    return res


MATRIX_COLUMNS = ("fault", "point", "setpoint_pct", "probe_pct", "inject_us", "detect_us",
                  "latency_ms", "driver_disabled", "safe_action")
MATRIX_FAULTS = {"belt": "belt", "motor": "motor", "driver": "driver",
                 "sensor": "hall_short_vcc", "mcu": "kill_node_tps"}
DEFAULT_POINTS = {"idle": [0.0, 30.0], "mid": [50.0, 20.0], "full": [100.0, 70.0]}


def fault_case(sc: Scenario, fault: str, point: str, level: float, probe: float,
               inject_us: int, observe_us: int) -> tuple[tuple, Rig]:
    """Hold ``level``, then inject ``fault`` and move the setpoint to ``probe``."""
    stim = S.pulse([level, probe], [0.0, inject_us / US_PER_S])
    fspec = FaultSpec(MATRIX_FAULTS.get(fault, fault), inject_us)
    rig = Rig(sc, stim, with_tps=True, faults=[fspec])
    rig.run(inject_us + observe_us)
    tr = rig.trace.cols
    detect = -1
    for k in range(len(rig.trace)):
        if tr["fault_active"][k] and M._detected(tr, k):
            detect = int(tr["time_us"][k])
            break
    latency = (detect - inject_us) / 1000.0 if detect >= 0 else math.inf
    tva = rig.tva
    disabled = not rig.plant.energized
    if not rig.ignition.on:
        action = "ignition_interrupt"
    elif tva.mode == Mode.FAILED and tva.failsafe.safe_action == "idle_return":
        action = "idle_return"
    else:
        action = "none"
    return (fault, point, level, probe, inject_us, detect, latency, int(disabled), action), rig


def run_fault_matrix(sc: Scenario, full: bool = False) -> RunResult:
    t0 = time.perf_counter()
    mx = sc.matrix
    classes = list(mx.get("classes", MATRIX_FAULTS))
    points = dict(mx.get("points", DEFAULT_POINTS))
    inject_us = int(round(float(mx.get("inject_s", 2.0)) * US_PER_S))
    observe_us = int(round(float(mx.get("observe_s", 1.5)) * US_PER_S))
    trace = Trace(MATRIX_COLUMNS, int_columns=("inject_us", "detect_us", "driver_disabled"),
                  text_columns=("fault", "point", "safe_action"))
    traces = {}
    for fault in classes:
        for name, (level, probe) in points.items():
            row, rig = fault_case(sc, fault, name, float(level), float(probe), inject_us, observe_us)
            trace.append(row)
            traces[f"bus_{fault}_{name}"] = bus_trace(rig.bus)
    limit = TvaConfig.from_dict(sc.tva).failsafe_timer_us / 1000.0 + 20.0
    report = M.matrix_metrics(trace.cols, limit)
    res = RunResult(sc, report, {"matrix": trace, **traces})
    res.checks = evaluate(sc, report)
    res.runtime_s = time.perf_counter() - t0
    return res


RUNNERS = {
    "endurance": run_endurance,
    "open_loop_sweep": run_open_loop_sweep,
    "step_ramp": run_step_ramp,
    "full_chain": run_full_chain,
    "fault_matrix": run_fault_matrix,
}


def run(sc: Scenario, full: bool = False) -> RunResult:
    return RUNNERS[sc.kind](sc, full)


def recompute(sc: Scenario, name: str, cols) -> M.MetricsReport:
    """Metrics from a stored trace, as the runner would compute them."""
    if name == "signal":
        return M.closed_loop_metrics(cols, *_rpm_limits(sc))
    if name == "sweep":
        sw = sc.stimulus["sweep"]
        window = int(sw.get("correction_window", sw.get("gear_period", 10)))
        return M.sweep_metrics(cols, window, float(sw.get("span_deg", USABLE_DEG)))
    if name == "matrix":
        limit = TvaConfig.from_dict(sc.tva).failsafe_timer_us / 1000.0 + 20.0
        return M.matrix_metrics(cols, limit)
    raise ValueError(f"no metrics defined for trace {name!r}")
