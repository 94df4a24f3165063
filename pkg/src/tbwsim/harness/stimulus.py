"""Throttle stimuli. Every stimulus is a deterministic function of simulated
time returning a throttle opening in percent."""

from __future__ import annotations

import bisect
import csv
from dataclasses import dataclass
from pathlib import Path

from ..can_bus import ID_TPS, CanBus, make_frame
from ..sim_core import US_PER_S, PercentPosition, RngStream, Scheduler


class Stimulus:
    kind = "base"

    def value(self, t_us: int) -> float:
        raise NotImplementedError

    def __call__(self, t_us: int) -> float:
        return self.value(t_us)


class Piecewise(Stimulus):
    """Linear interpolation through ``(t_us, pct)`` knots; held outside.
    Two knots at the same time give a jump."""

    kind = "piecewise"

    def __init__(self, knots):
        knots = sorted(((int(t), float(v)) for t, v in knots), key=lambda k: k[0])
        if not knots:
            raise ValueError("stimulus needs at least one knot")
        self.times = [t for t, _ in knots]
        self.values = [v for _, v in knots]

    def value(self, t_us: int) -> float:
        i = bisect.bisect_right(self.times, t_us)
        if i == 0:
            return self.values[0]
        if i == len(self.times):
            return self.values[-1]
        t0, t1 = self.times[i - 1], self.times[i]
        v0, v1 = self.values[i - 1], self.values[i]
        return v0 + (v1 - v0) * (t_us - t0) / (t1 - t0)


def pulse(levels, times_s) -> Piecewise:
    """Step sequence: ``levels[k]`` applies from ``times_s[k]`` on."""
    if len(levels) != len(times_s):
        raise ValueError("levels and times differ in length")
    knots = []
    prev = float(levels[0])
    for lvl, t in zip(levels, times_s):
        t_us = int(round(t * US_PER_S))
        knots.append((t_us, prev))
        knots.append((t_us, float(lvl)))
        prev = float(lvl)
    return Piecewise(knots)


def ramp(segments) -> Piecewise:
    """``segments`` is a list of ``[t_s, pct]`` corner points."""
    return Piecewise((int(round(t * US_PER_S)), v) for t, v in segments)


def script(path, base_dir: Path | None = None) -> Piecewise:
    """Two-column CSV file ``time_s,pct`` read as corner points."""
    p = Path(path)
    if not p.is_absolute() and base_dir is not None:
        p = base_dir / p
    knots = []
    with open(p, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().startswith("#") or row[0].strip() == "time_s":
                continue
            knots.append((int(round(float(row[0]) * US_PER_S)), float(row[1])))
    return Piecewise(knots)


class RandomSetpoints(Stimulus):
    """Uniformly drawn openings (0.1 % grid) held for 60/rate seconds each."""

    kind = "random_setpoints"

    def __init__(self, rate_per_min: float, rng: RngStream, start_us: int = 0,
                 low: float = 0.0, high: float = 100.0, initial: float = 0.0):
        self.dwell_us = int(round(60 * US_PER_S / rate_per_min))
        self.rng = rng
        self.start_us = start_us
        self.low, self.high = low, high
        self.initial = initial
        self.levels: list[float] = []

    def _level(self, k: int) -> float:
        while len(self.levels) <= k:
            x = float(self.rng.uniform(self.low, self.high))
            self.levels.append(PercentPosition.from_percent(x).percent)
        return self.levels[k]

    def value(self, t_us: int) -> float:
        if t_us < self.start_us:
            return self.initial
        return self._level((t_us - self.start_us) // self.dwell_us)

    def count(self, until_us: int) -> int:
        """Setpoints applied in ``[start, until)``."""
        if until_us <= self.start_us:
            return 0
        return -(-(until_us - self.start_us) // self.dwell_us)


@dataclass
class SweepPlan:
    """Open-loop stepper sweep: reference angles in deg."""

    step_deg: float
    span_deg: float

    def angles(self) -> list[float]:
        n = int(self.span_deg / self.step_deg + 1e-9)
        return [i * self.step_deg for i in range(n + 1)]


class RestBusNode:
    """Stands in for the sensor ECU: sends 0x101 frames from a stimulus."""

    def __init__(self, sched: Scheduler, bus: CanBus, stimulus: Stimulus, period_us: int = 20_000):
        self.sched = sched
        self.bus = bus
        self.stimulus = stimulus
        self.period_us = period_us
        self.counter = 0

    def tick(self) -> None:
        pos = PercentPosition.from_percent(self.stimulus(self.sched.now)).tenths
        self.bus.transmit(make_frame(ID_TPS, pos, self.counter, 0))
        self.counter = (self.counter + 1) % 16

    def start(self, at: int = 0) -> None:
        self.sched.every(self.period_us, self.tick, start=at, label="rest-bus")


def build(entry: dict, streams, start_us: int = 0, base_dir: Path | None = None) -> Stimulus:
    """Stimulus from its scenario-file mapping (exactly one key)."""
    if len(entry) != 1:
        raise ValueError(f"stimulus needs exactly one kind, got {sorted(entry)}")
    kind, arg = next(iter(entry.items()))
    if kind == "random_setpoints":
        arg = dict(arg)
        start = start_us + int(round(float(arg.pop("start_s", 0.0)) * US_PER_S))
        return RandomSetpoints(arg.pop("rate_per_min", 90), streams["stimulus"],
                               start_us=start, **arg)
    if kind == "pulse":
        return pulse(arg["levels"], arg["times"])
    if kind == "ramp":
        return ramp(arg["segments"])
    if kind == "script":
        return script(arg["file"], base_dir)
    raise ValueError(f"unknown stimulus kind {kind!r}")
