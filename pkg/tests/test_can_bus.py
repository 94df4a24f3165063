import pytest
from hypothesis import given, strategies as st

from tbwsim.can_bus import (ID_TPS, ID_TVA_STATUS, BusFaultPlan, BusFrame, CanBus, FaultKind,
                            FrameError, Freshness, FreshnessMonitor, check_freshness,
                            decode_payload, encode_payload, make_frame)
from tbwsim.sim_core import Scheduler, Streams


@given(st.integers(0, 1023), st.integers(0, 15), st.integers(0, 255))
def test_payload_roundtrip(pos, cnt, flags):
    assert decode_payload(encode_payload(pos, cnt, flags)) == (pos, cnt, flags)


def test_payload_layout():
    assert encode_payload(1000, 5, 0x81) == bytes((0xE8, 0x17, 0x81, 0x00))


def test_payload_guards():
    for args in ((1024, 0, 0), (0, 16, 0), (0, 0, 256), (-1, 0, 0)):
        with pytest.raises(FrameError):
            encode_payload(*args)
    with pytest.raises(FrameError):
        decode_payload(bytes((0, 0x40, 0, 0)))
    with pytest.raises(FrameError):
        decode_payload(bytes((0, 0, 0, 1)))
    with pytest.raises(FrameError):
        BusFrame(0x800, bytes(4))
    with pytest.raises(FrameError):
        BusFrame(0x101, bytes(3))


def test_single_drop_tolerated_two_anomalies_latch():
    m = FreshnessMonitor()
    assert m.on_frame(0, 0) == Freshness.FRESH
    assert m.on_frame(1, 20_000) == Freshness.FRESH
    assert m.on_frame(3, 60_000) == Freshness.FRESH  # one frame lost
    assert m.on_frame(4, 80_000) == Freshness.FRESH
    assert m.on_frame(15, 100_000) == Freshness.FRESH  # wrap is checked mod 16
    m2 = FreshnessMonitor()
    m2.on_frame(15, 0)
    assert m2.on_frame(0, 20_000) == Freshness.FRESH and m2.anomalies == 0


def test_frozen_counter_latches_error():
    m = FreshnessMonitor()
    m.on_frame(7, 0)
    assert m.on_frame(7, 20_000) == Freshness.FRESH
    assert m.on_frame(7, 40_000) == Freshness.COUNTER_ERROR
    assert m.on_frame(8, 60_000) == Freshness.COUNTER_ERROR  # latched
    assert m.poll(60_000) == Freshness.COUNTER_ERROR


def test_stale_window():
    assert check_freshness(None, None, 0) == Freshness.STALE
    assert check_freshness(1, 0, 50_000) == Freshness.FRESH
    assert check_freshness(1, 0, 50_001) == Freshness.STALE
    m = FreshnessMonitor()
    m.on_frame(0, 10_000)
    assert m.poll(60_000) == Freshness.FRESH
    assert m.poll(60_001) == Freshness.STALE


def _bus(*plans):
    sched = Scheduler()
    bus = CanBus(sched)
    for p in plans:
        bus.add_fault(p)
    got = []
    bus.subscribe("tva", lambda f: got.append((sched.now, f)))
    bus.subscribe("tps", lambda f: got.append(("tps", f)))
    cnt = iter(range(100))
    sched.every(20_000, lambda: bus.transmit(make_frame(ID_TPS, 100, next(cnt) % 16, 0)), until=180_000)
    sched.run()
    return bus, got


def test_delivery_latency_and_no_echo():
    bus, got = _bus()
    assert [t for t, _ in got] == [k * 20_000 + 200 for k in range(10)]
    assert bus.sent == 10 and bus.delivered == 10
    assert bus.trace[0] == (0, ID_TPS, 100, 0, 0, 0)


def test_drop_window():
    bus, got = _bus(BusFaultPlan(FaultKind.DROP, 40_000, 80_000))
    assert [f.fields[1] for _, f in got] == [0, 1, 5, 6, 7, 8, 9]
    assert len(bus.trace) == 7


def test_freeze_counter_and_trace_flag():
    bus, got = _bus(BusFaultPlan("freeze_counter", 60_000))
    assert [f.fields[1] for _, f in got] == [0, 1, 2, 3, 3, 3, 3, 3, 3, 3]
    assert [r[5] for r in bus.trace] == [0, 0, 0] + [1] * 7


def test_corrupt_payload_seeded():
    a = _bus(BusFaultPlan("corrupt_payload", 0, rng=Streams(1)["bus.fault"]))[1]
    b = _bus(BusFaultPlan("corrupt_payload", 0, rng=Streams(1)["bus.fault"]))[1]
    assert [f.payload for _, f in a] == [f.payload for _, f in b]
    assert any(f.fields[0] != 100 for _, f in a)


def test_fault_only_hits_listed_ids():
    sched = Scheduler()
    bus = CanBus(sched)
    bus.add_fault(BusFaultPlan(FaultKind.DROP, 0, ids=(ID_TPS,)))
    got = []
    bus.subscribe("tps", got.append)
    bus.transmit(make_frame(ID_TVA_STATUS, 1, 0, 0))
    sched.run()
    assert len(got) == 1


def test_killed_node_neither_sends_nor_receives():
    sched = Scheduler()
    bus = CanBus(sched)
    bus.add_fault(BusFaultPlan(FaultKind.KILL_TVA, 0))
    got = []
    bus.subscribe("tva", got.append)
    assert bus.transmit(make_frame(ID_TVA_STATUS, 0, 0, 0)) is None
    bus.transmit(make_frame(ID_TPS, 0, 0, 0))
    sched.run()
    assert got == [] and bus.node_dead("tva") and not bus.node_dead("tps")
