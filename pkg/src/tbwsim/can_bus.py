"""Simulated CAN segment between the sensor and actuator ECUs.

Payload layout (4 bytes, identical for all three message ids)::

    byte 0-1  little-endian uint16: bits 0-9 position (tenths of %),
              bits 10-13 rolling counter, bits 14-15 zero
    byte 2    error / cause flags
    byte 3    zero
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable

from .sim_core import RngStream, Scheduler

ID_TPS = 0x101
ID_TVA_STATUS = 0x102
ID_TVA_ERROR = 0x103

BUS_PERIOD_US = 20_000
STALE_WINDOW_US = 50_000

NODE_TPS = "tps"
NODE_TVA = "tva"
SENDER_OF = {ID_TPS: NODE_TPS, ID_TVA_STATUS: NODE_TVA, ID_TVA_ERROR: NODE_TVA}


class FrameError(ValueError):
    pass


@dataclass(frozen=True)
class BusFrame:
    id: int
    payload: bytes
    timestamp: int = 0

    def __post_init__(self):
        if not 0 <= self.id < 0x800:
            raise FrameError(f"not an 11-bit id: {self.id:#x}")
        if len(self.payload) != 4:
            raise FrameError("payload must be 4 bytes")

    @property
    def fields(self) -> tuple[int, int, int]:
        return decode_payload(self.payload)


def encode_payload(position: int, counter: int, flags: int) -> bytes:
    if not 0 <= position < 1024:
        raise FrameError(f"position does not fit in 10 bits: {position}")
    if not 0 <= counter < 16:
        raise FrameError(f"counter does not fit in 4 bits: {counter}")
    if not 0 <= flags < 256:
        raise FrameError(f"flags do not fit in 8 bits: {flags}")
    word = position | (counter << 10)
    return bytes((word & 0xFF, word >> 8, flags, 0))


def decode_payload(payload: bytes) -> tuple[int, int, int]:
    """Returns ``(position, counter, flags)``. Reserved bits must be zero."""
    word = payload[0] | (payload[1] << 8)
    if word >> 14 or payload[3]:
        raise FrameError("reserved bits set")
    return word & 0x3FF, (word >> 10) & 0xF, payload[2]


def make_frame(msg_id: int, position: int, counter: int, flags: int, timestamp: int = 0) -> BusFrame:
    return BusFrame(msg_id, encode_payload(position, counter, flags), timestamp)


class FaultKind(str, enum.Enum):
    DROP = "drop"
    CORRUPT = "corrupt_payload"
    FREEZE_COUNTER = "freeze_counter"
    KILL_TPS = "kill_node_tps"
    KILL_TVA = "kill_node_tva"


@dataclass
class BusFaultPlan:
    kind: FaultKind
    start: int
    end: int | None = None
    ids: tuple[int, ...] = (ID_TPS,)
    rng: RngStream | None = None
    _frozen: int | None = field(default=None, repr=False)

    def __post_init__(self):
        self.kind = FaultKind(self.kind)

    def active(self, t: int) -> bool:
        return t >= self.start and (self.end is None or t <= self.end)


class Freshness(str, enum.Enum):
    FRESH = "fresh"
    STALE = "stale"
    COUNTER_ERROR = "counter_error"


class FreshnessMonitor:
    """Receiver-side message age and counter supervision.

    A counter step of +1 is normal. A repeat or a jump is an anomaly. One
    anomaly (typically a single dropped frame) is tolerated; two anomalous
    frames in a row latch ``counter_error``.
    """

    def __init__(self, stale_window_us: int = STALE_WINDOW_US):
        self.stale_window_us = stale_window_us
        self.last_counter: int | None = None
        self.last_seen: int | None = None
        self.anomalies = 0
        self.counter_error = False

    def on_frame(self, counter: int, now: int) -> Freshness:
        if self.last_counter is not None:
            delta = (counter - self.last_counter) % 16
            if delta == 1:
                self.anomalies = 0
            else:
                self.anomalies += 1
                if self.anomalies >= 2:
                    self.counter_error = True
        self.last_counter = counter
        self.last_seen = now
        return Freshness.COUNTER_ERROR if self.counter_error else Freshness.FRESH

    def poll(self, now: int) -> Freshness:
        if self.counter_error:
            return Freshness.COUNTER_ERROR
        return check_freshness(self.last_counter, self.last_seen, now, self.stale_window_us)


def check_freshness(last_counter: int | None, last_seen: int | None, now: int,
                    stale_window_us: int = STALE_WINDOW_US) -> Freshness:
    """Age check only; counter continuity lives in :class:`FreshnessMonitor`."""
    if last_seen is None or now - last_seen > stale_window_us:
        return Freshness.STALE
    return Freshness.FRESH


TRACE_COLUMNS = ("time_us", "id", "pos", "counter", "err", "fault_active")


class CanBus:
    """Broadcast segment. Frames reach every subscribed node except the sender
    after ``latency_us`` unless an active fault plan consumes or alters them."""

    def __init__(self, sched: Scheduler, latency_us: int = 200, log: bool = True):
        self.sched = sched
        self.latency_us = int(latency_us)
        self.plans: list[BusFaultPlan] = []
        self._subs: list[tuple[str, Callable[[BusFrame], None]]] = []
        self.trace: list[tuple[int, int, int, int, int, int]] = []
        self.log = log
        self.sent = 0
        self.delivered = 0

    def subscribe(self, node: str, callback: Callable[[BusFrame], None]) -> None:
        self._subs.append((node, callback))

    def add_fault(self, plan: BusFaultPlan) -> None:
        self.plans.append(plan)

    def node_dead(self, node: str, t: int | None = None) -> bool:
        t = self.sched.now if t is None else t
        kind = FaultKind.KILL_TPS if node == NODE_TPS else FaultKind.KILL_TVA
        return any(p.kind == kind and p.active(t) for p in self.plans)

    def fault_active(self, t: int | None = None) -> bool:
        t = self.sched.now if t is None else t
        return any(p.active(t) for p in self.plans)

    def transmit(self, frame: BusFrame, latency_us: int | None = None) -> int | None:
        """Queue ``frame`` for delivery; returns the event id or None if consumed."""
        now = self.sched.now
        sender = SENDER_OF.get(frame.id)
        if sender is not None and self.node_dead(sender, now):
            return None
        frame = BusFrame(frame.id, frame.payload, now)
        active = False
        for plan in self.plans:
            if not plan.active(now) or frame.id not in plan.ids:
                continue
            active = True
            if plan.kind == FaultKind.DROP:
                return None
            pos, cnt, flags = frame.fields
            if plan.kind == FaultKind.FREEZE_COUNTER:
                if plan._frozen is None:
                    plan._frozen = cnt
                frame = make_frame(frame.id, pos, plan._frozen, flags, now)
            elif plan.kind == FaultKind.CORRUPT:
                rng = plan.rng
                pos = int(rng.integers(0, 1024)) if rng is not None else pos ^ 0x3FF
                cnt = int(rng.integers(0, 16)) if rng is not None else (cnt + 8) % 16
                frame = make_frame(frame.id, pos, cnt, flags, now)
        self.sent += 1
        if self.log:
            pos, cnt, flags = frame.fields
            self.trace.append((now, frame.id, pos, cnt, flags, int(active or self.fault_active(now))))
        lat = self.latency_us if latency_us is None else int(latency_us)
        return self.sched.schedule(lambda: self._deliver(frame, sender), now + lat, "can-rx")

    def _deliver(self, frame: BusFrame, sender: str | None) -> None:
        for node, cb in self._subs:
            if node == sender or self.node_dead(node):
                continue
            self.delivered += 1
            cb(frame)
