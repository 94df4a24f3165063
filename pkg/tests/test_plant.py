import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tbwsim import kernels
from tbwsim.plant import (EngineModel, HallModel, IgnitionLine, Plant, PlantParams, TorqueCurve,
                          hall_measure, hall_volts_to_deg, suction_disturbance, transmission)
from tbwsim.sim_core import RngStream


def test_torque_curve_shapes():
    hyp = TorqueCurve()
    lin = TorqueCurve(shape="linear")
    for c in (hyp, lin):
        assert c.available(0.0) == 12.0
        assert c.available(360.0) == 12.0
        assert c.available(-200.0) == 12.0
    assert hyp.available(720.0) == pytest.approx(6.0)
    assert hyp.available(1125.0) == pytest.approx(3.84)
    assert lin.available(540.0) == pytest.approx(6.0)
    assert lin.available(720.0) == 0.0
    assert lin.available(1000.0) == 0.0


def test_suction_and_transmission():
    assert suction_disturbance(9000.0) == 4.0
    assert suction_disturbance(4500.0) == pytest.approx(1.0)
    assert suction_disturbance(20000.0) == 4.0
    with pytest.raises(ValueError):
        suction_disturbance(-1.0)
    assert transmission(103.5) == pytest.approx(69.0)


def test_hall_quantization_and_rails():
    m = HallModel()
    r = hall_measure(34.5, m)
    assert abs(r.degrees - 34.5) <= 0.011 + 1e-12
    assert round(r.degrees / 0.022, 6) == round(r.degrees / 0.022)
    assert hall_volts_to_deg(0.5) == 0.0 and hall_volts_to_deg(4.5) == 90.0
    assert hall_measure(10.0, m, fault="short_vcc").raw_v == 5.0
    assert hall_measure(10.0, m, fault="short_gnd").raw_v == 0.0
    assert hall_measure(10.0, m, fault="open").raw_v == 0.0


def test_hall_profile_within_datasheet_bound():
    for seed in range(20):
        m = HallModel.random_profile(RngStream(seed, "hall"))
        worst = max(abs(m.linearity_error(x)) for x in np.linspace(0, 69, 500))
        assert worst <= m.linearity_deg + 1e-12
        for x in np.linspace(0, 69, 50):
            assert abs(hall_measure(float(x), m).degrees - x) <= m.error_bound_deg()
        assert m.linearity_error(0.0) == 0.0 and abs(m.linearity_error(69.0)) < 1e-12


def test_hall_drift():
    m = HallModel(drift_pct_per_h=0.1)
    assert hall_measure(0.0, m, hours=10.0).degrees == pytest.approx(0.69, abs=0.011)


def test_engine_lag():
    e = EngineModel(rpm=2000.0)
    for _ in range(300):
        e.step(100.0, 0.01)
    assert e.rpm == pytest.approx(9000.0, rel=1e-3)
    e.step(0.0, 10.0, ignition=False)
    assert e.rpm < 1.0


def _full_sweeps(plant, speed_deg_s=750.0, cycles=3):
    f = plant.max_step_rate(speed_deg_s)
    travel_s = 69.0 / speed_deg_s
    for _ in range(cycles):
        plant.drive(f, int(travel_s * 1e6) + 50_000)
        plant.drive(-f, int(travel_s * 1e6) + 50_000)


def test_zero_step_loss_at_clamp_speed_and_max_suction():
    p = Plant(PlantParams(), valve_deg=0.0)
    p.S[2] = 9000.0  # engine already at max speed: worst suction
    _full_sweeps(p)
    assert p.lost_steps == 0
    # net travel matches the commands; only the end stops stalled
    assert p.valve_deg == pytest.approx(0.0, abs=p.params.valve_ustep_deg / 100)


@settings(max_examples=40, deadline=None)
@given(speed=st.floats(1.0, 750.0), dur_ms=st.integers(1, 200), extra=st.floats(0.0, 0.5))
def test_zero_step_loss_under_nominal_margin(speed, dur_ms, extra):
    p = Plant(valve_deg=30.0)
    p.set_load_extra(extra)
    f = p.max_step_rate(speed)
    p.drive(f, dur_ms * 1000)
    p.drive(-f, dur_ms * 1000)
    assert p.lost_steps == 0


def test_overload_loses_steps():
    p = Plant(valve_deg=30.0)
    p.set_load_extra(5.0)
    v0 = p.valve_deg
    p.drive(p.max_step_rate(500.0), 50_000)
    assert p.lost_steps > 0
    assert p.valve_deg == v0


def test_linear_curve_loses_steps_at_high_speed():
    p = Plant(PlantParams(torque=TorqueCurve(shape="linear")), valve_deg=0.0)
    p.drive(p.max_step_rate(750.0), 50_000)
    assert p.lost_steps > 0


def test_end_stops_stall_instead_of_passing():
    p = Plant(valve_deg=68.0)
    p.drive(p.max_step_rate(100.0), 100_000)
    assert p.valve_deg == pytest.approx(69.0)
    assert p.stalled_steps > 0 and p.lost_steps == 0


def test_detent_holds_parked_valve_below_high_band():
    p = Plant(valve_deg=34.5)
    v0 = p.valve_deg
    p.drive(0.0, 2_000_000, enabled=False)
    assert p.valve_deg == v0
    hi = Plant(valve_deg=69.0)
    hi.S[2] = 9000.0
    hi.drive(0.0, 200_000, enabled=False)
    assert hi.valve_deg < 69.0


def test_belt_break_decouples_valve():
    p = Plant(valve_deg=40.0)
    p.S[2] = 9000.0
    p.break_belt()
    p.drive(p.max_step_rate(200.0), 500_000)
    assert p.motor_deg > 60.0
    assert p.valve_deg < 40.0


def test_driver_and_motor_faults():
    p = Plant(valve_deg=20.0)
    v0 = p.valve_deg
    p.fail_driver()
    p.set_command(p.max_step_rate(100.0), True)
    assert not p.energized
    p.advance_to(100_000)
    assert p.valve_deg == v0
    q = Plant(valve_deg=20.0)
    q.fail_motor()
    q.drive(q.max_step_rate(100.0), 100_000)
    assert q.driver.open_load and q.executed == 0 and q.lost_steps > 0


def test_ignition_cut_stops_engine():
    ign = IgnitionLine()
    p = Plant(ignition=ign)
    ign.cut(0)
    ign.cut(5)  # first cut wins
    assert ign.cut_at == 0
    p.advance_to(3_000_000)
    assert p.rpm < 1.0
    assert Plant(PlantParams(engine_running=False)).rpm == 0.0


def test_lazy_integration_matches_fine_steps():
    a, b = Plant(valve_deg=10.0), Plant(valve_deg=10.0)
    f = a.max_step_rate(300.0)
    a.set_command(f, True)
    b.set_command(f, True)
    a.advance_to(100_000)
    for t in range(100, 100_001, 100):
        b.advance_to(t)
    assert np.array_equal(a.S, b.S)


def test_params_roundtrip():
    p = PlantParams(detent_ncm=0.7, torque=TorqueCurve(shape="linear"))
    assert PlantParams.from_dict(p.to_dict()) == p


@pytest.mark.skipif(kernels.advance_plant_ext is None, reason="compiled kernel not built")
@settings(max_examples=200, deadline=None)
@given(freq=st.floats(-40_000, 40_000), shaft=st.floats(0.0, 69.0), rpm=st.floats(0.0, 9000.0),
       energized=st.booleans(), belt=st.booleans(), motor_ok=st.booleans(), ign=st.booleans(),
       extra=st.floats(0.0, 6.0), linear=st.booleans(), n=st.integers(1, 400))
def test_backends_bit_identical(freq, shaft, rpm, energized, belt, motor_ok, ign, extra, linear, n):
    p = Plant(PlantParams(torque=TorqueCurve(shape="linear" if linear else "hyperbolic")),
              valve_deg=shaft)
    p.S[2] = rpm
    P = p.P.copy()
    P[1] = freq
    P[2] = float(energized)
    P[3] = float(motor_ok)
    P[4] = float(belt)
    P[5] = float(ign)
    P[20] = extra
    a, b = p.S.copy(), p.S.copy()
    kernels.advance_plant_py(a, P, n)
    kernels.advance_plant_ext(b, P, n)
    assert a.tobytes() == b.tobytes()


def test_backend_reported():
    assert kernels.BACKEND in ("cython", "python")
    assert math.isfinite(Plant().rpm)
