"""Deterministic event loop, integer-microsecond clock and seeded random streams."""

from __future__ import annotations

import heapq
import zlib
from dataclasses import dataclass
from typing import Callable

import numpy as np

US_PER_MS = 1_000
US_PER_S = 1_000_000

#: Largest valid wire value for a throttle position (100.0 %).
PERCENT_MAX_TENTHS = 1000
WIRE_MAX = 1023


class SchedulingError(RuntimeError):
    pass


@dataclass(frozen=True, order=True)
class PercentPosition:
    """Throttle position in tenths of a percent (0..1000 <=> 0.0..100.0 %)."""

    tenths: int

    def __post_init__(self):
        if not isinstance(self.tenths, (int, np.integer)):
            raise TypeError(f"tenths must be an integer, got {type(self.tenths).__name__}")
        if not 0 <= self.tenths <= PERCENT_MAX_TENTHS:
            raise ValueError(f"tenths out of range: {self.tenths}")

    @property
    def percent(self) -> float:
        return self.tenths / 10.0

    @classmethod
    def from_percent(cls, pct: float) -> "PercentPosition":
        """Round a real percentage to the nearest tenth, clamped to 0..100 %."""
        t = int(np.floor(pct * 10.0 + 0.5))
        return cls(min(max(t, 0), PERCENT_MAX_TENTHS))

    def __str__(self):
        return f"{self.percent:.1f}%"


def percent_encode(p: PercentPosition) -> int:
    return int(p.tenths)


def percent_decode(wire: int) -> PercentPosition | None:
    """Inverse of :func:`percent_encode`.

    Returns ``None`` for wire values above 1000; the caller treats that as a
    decode fault.
    """
    wire = int(wire)
    if wire < 0 or wire > WIRE_MAX:
        raise ValueError(f"wire value does not fit in 10 bits: {wire}")
    if wire > PERCENT_MAX_TENTHS:
        return None
    return PercentPosition(wire)


class RngStream:
    """Named, independently seeded random stream.

    The same ``(seed, stream_id)`` pair always yields the same draws, and
    creating extra streams never perturbs existing ones.
    """

    def __init__(self, seed: int, stream_id: int | str):
        if isinstance(stream_id, str):
            stream_id = zlib.crc32(stream_id.encode("utf-8"))
        self.seed = int(seed) & 0xFFFF_FFFF_FFFF_FFFF
        self.stream_id = int(stream_id)
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream_id,))
        self.gen = np.random.Generator(np.random.PCG64(ss))

    def normal(self, sigma: float = 1.0, size=None):
        return self.gen.normal(0.0, sigma, size)

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None):
        return self.gen.uniform(low, high, size)

    def integers(self, low: int, high: int, size=None):
        return self.gen.integers(low, high, size)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"


class Streams:
    """Factory handing out one :class:`RngStream` per name for a scenario seed."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._cache: dict[str, RngStream] = {}

    def __getitem__(self, name: str) -> RngStream:
        if name not in self._cache:
            self._cache[name] = RngStream(self.seed, name)
        return self._cache[name]


@dataclass
class SimEvent:
    action: Callable[[], None]
    label: str = ""
    cancelled: bool = False


class Scheduler:
    """Single-threaded discrete-event loop.

    Events are ordered by ``(time, insertion order)`` so identical inputs give
    identical traces.
    """

    def __init__(self):
        self._queue: list[tuple[int, int, SimEvent]] = []
        self._seq = 0
        self.now = 0
        self.executed = 0

    def schedule(self, event: SimEvent | Callable[[], None], at: int, label: str = "") -> int:
        at = int(at)
        if at < self.now:
            raise SchedulingError(f"cannot schedule at t={at} us, clock is at {self.now} us")
        if not isinstance(event, SimEvent):
            event = SimEvent(event, label)
        eid = self._seq
        self._seq += 1
        heapq.heappush(self._queue, (at, eid, event))
        return eid

    def schedule_in(self, delay_us: int, event, label: str = "") -> int:
        return self.schedule(event, self.now + int(delay_us), label)

    def every(self, period_us: int, action: Callable[[], None], start: int = 0,
              label: str = "", until: int | None = None) -> SimEvent:
        """Run ``action`` at ``start, start + period, ...``. Returns a handle; set
        ``handle.cancelled = True`` to stop the series."""
        period_us = int(period_us)
        if period_us <= 0:
            raise ValueError("period must be positive")
        handle = SimEvent(action, label)

        def fire(t=start):
            def run():
                if handle.cancelled:
                    return
                action()
                nxt = t + period_us
                if until is None or nxt <= until:
                    self.schedule(fire(nxt), nxt, label)
            return SimEvent(run, label)

        self.schedule(fire(start), start, label)
        return handle

    def cancel(self, eid: int) -> None:
        for at, seq, ev in self._queue:
            if seq == eid:
                ev.cancelled = True
                return

    def peek_time(self) -> int | None:
        return self._queue[0][0] if self._queue else None

    def step(self) -> bool:
        if not self._queue:
            return False
        at, _, ev = heapq.heappop(self._queue)
        # heap order guarantees at >= now
        self.now = at
        if not ev.cancelled:
            ev.action()
            self.executed += 1
        return True

    def run(self, until: int | None = None) -> int:
        """Execute events with time <= ``until`` (all events if None)."""
        while self._queue:
            if until is not None and self._queue[0][0] > until:
                break
            self.step()
        if until is not None and until > self.now:
            self.now = int(until)
        return self.now
