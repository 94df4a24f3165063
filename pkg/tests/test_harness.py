import json
import math

import pytest
import yaml

from tbwsim import cli
from tbwsim.harness import export as X
from tbwsim.harness import metrics as M
from tbwsim.harness import runner, stimulus as S
from tbwsim.harness.scenario import (KINDS, Check, Scenario, ScenarioError, dump_scenario,
                                     list_scenarios, load_scenario, resolve)
from tbwsim.sim_core import Streams

MS = 1000


# -- stimuli -----------------------------------------------------------------

def test_piecewise_and_pulse():
    p = S.pulse([0.0, 100.0, 20.0], [0.0, 1.0, 2.0])
    assert p(999_999) == 0.0 and p(1_000_000) == 100.0 and p(2_500_000) == 20.0
    r = S.ramp([[0.0, 0.0], [1.0, 100.0]])
    assert r(250_000) == 25.0 and r(5_000_000) == 100.0
    with pytest.raises(ValueError):
        S.pulse([1.0], [0.0, 1.0])


def test_script_stimulus(tmp_path):
    f = tmp_path / "s.csv"
    f.write_text("time_s,pct\n# comment\n0,0\n1,40\n")
    st = S.build({"script": {"file": "s.csv"}}, Streams(1), base_dir=tmp_path)
    assert st(500_000) == 20.0


def test_random_setpoints_on_grid_and_seeded():
    a = S.build({"random_setpoints": {"rate_per_min": 90, "start_s": 1.0}}, Streams(4))
    b = S.build({"random_setpoints": {"rate_per_min": 90, "start_s": 1.0}}, Streams(4))
    ts = [1_000_000 + k * 666_667 for k in range(50)]
    va = [a(t) for t in ts]
    assert va == [b(t) for t in ts]
    assert a(0) == 0.0
    assert all(round(v * 10) == v * 10 and 0 <= v <= 100 for v in va)
    assert a.count(601_000_000) == 900
    with pytest.raises(ValueError):
        S.build({"ramp": {}, "pulse": {}}, Streams(1))
    with pytest.raises(ValueError):
        S.build({"noise": {}}, Streams(1))


def test_sweep_plan():
    plan = S.SweepPlan(360.0 / 950.0, 148.0)
    a = plan.angles()
    assert len(a) == 391 and a[0] == 0.0 and a[-1] <= 148.0


# -- metric oracles ------------------------------------------------------------

def _grid(n_ms):
    return [k * MS for k in range(n_ms)]


def test_step_metrics_oracle():
    t = _grid(700)
    ref = [0.0 if k < 200 else 50.0 for k in range(700)]
    y = []
    for k in range(700):
        if k < 210:
            y.append(0.0)
        elif k < 280:
            y.append(50.0 * (k - 210) / 70.0)
        elif k < 300:
            y.append(50.3)
        else:
            y.append(50.1)
    (s,) = M.step_responses(t, ref, y)
    # last out-of-band sample: k = 279 (49.29); settled from k = 280
    assert s.settling_ms == 80.0
    assert s.overshoot_pct == 0.3
    assert s.steady_error_pct == 0.1


def test_plateaus_and_end_errors():
    t = _grid(400)
    x = [0.0] * 150 + [1.0] * 50 + [2.0] * 200
    assert M.plateaus(t, x) == [(0, 149), (200, 399)]
    assert M.plateau_end_errors(t, x, [0.5] * 400, x) == [(149, 0.5), (399, 1.5)]


def test_ramp_lag_oracle():
    t = _grid(1500)
    ref = [0.0] * 200 + [round(k / 10.0, 1) for k in range(1000)] + [99.9] * 300
    y = [ref[max(k - 12, 0)] for k in range(1500)]
    assert M.ramp_lag_ms(t, ref, y) == 12.0
    assert M.ramp_lag_ms(t, ref, ref) == 0.0


def test_dead_time_oracle():
    t = _grid(1000)
    stim = [0.0] * 300 + [min((k - 299) * 0.1, 30.0) for k in range(300, 1000)]
    valve = [0.0] * 345 + [0.5] * 655
    assert M.dead_time_ms(t, stim, valve) == 46.0
    # onset too close to the end of the trace is not judged
    stim2 = [0.0] * 900 + [10.0] * 100
    assert M.dead_time_ms(t, stim2, [0.0] * 1000) == 0.0


def test_zero_amplitude_sweep_gives_zero_deviation():
    cols = {"deviation_deg": [0.0] * 100}
    rep = M.sweep_metrics(cols, 10)
    assert rep.max_deviation_pct == 0.0 and rep.extras["raw_deviation_pct"] == 0.0


def test_sweep_correction_removes_periodic_error():
    dev = [0.3 * math.sin(2 * math.pi * k / 10) + 0.01 for k in range(100)]
    corr = M.sweep_correction(dev, 10)
    assert len(corr) == 91
    assert max(abs(c - 0.01) for c in corr) < 1e-12
    assert M.sweep_correction(dev, 1) == dev


def _health(n, **over):
    cols = {c: [0] * n for c in ("tps_err", "failsafe", "mode", "fault_active")}
    cols["ignition"] = [1] * n
    cols["mode"] = [1] * n
    cols["time_us"] = _grid(n)
    for name, (k0, k1, v) in over.items():
        for k in range(k0, k1):
            cols[name][k] = v
    return cols


def test_false_faults_and_latency():
    assert M.false_fault_count(_health(100)) == 0
    assert M.false_fault_count(_health(100, tps_err=(10, 20, 4))) == 1
    cols = _health(100, fault_active=(30, 100, 1), mode=(55, 100, 3))
    assert M.false_fault_count(cols) == 0
    assert M.fault_latency_ms(cols) == 25.0
    assert M.fault_latency_ms(_health(100)) is None
    assert M.fault_latency_ms(_health(100, fault_active=(30, 100, 1))) == math.inf


def test_band_accuracy_split():
    t = _grid(600)
    stim = [10.0] * 200 + [50.0] * 200 + [90.0] * 200
    w = stim
    y = [10.1] * 200 + [50.0] * 200 + [89.8] * 200
    rpm = [2500.0] * 200 + [5000.0] * 200 + [8500.0] * 200
    acc = M.band_accuracy(t, stim, w, y, rpm, 2000.0, 9000.0)
    assert acc == {"low": 99.9, "mid": 100.0, "high": 99.8}


def test_matrix_metrics():
    cols = {"fault": ["belt", "mcu"], "detect_us": [2_200_000, -1], "latency_ms": [200.0, math.inf],
            "driver_disabled": [1, 0], "safe_action": ["ignition_interrupt", "none"]}
    rep = M.matrix_metrics(cols, 220.0)
    assert rep.extras["detected"] == 1 and rep.extras["passed"] == 1
    assert rep.extras["latency_by_class_ms"] == {"belt": 200.0, "mcu": math.inf}


# -- scenarios -----------------------------------------------------------------

def test_check_parse_and_evaluate():
    c = Check.parse("band_accuracy_pct.low", ">= 99.9")
    assert c.evaluate({"extras": {"band_accuracy_pct": {"low": 99.95}}}) == (99.95, True)
    assert Check.parse("x", 3).op == "<="
    assert not Check.parse("x", "< 1").evaluate({"x": None})[1]
    with pytest.raises(ScenarioError):
        Check.parse("x", "about 3")
    with pytest.raises(ScenarioError):
        Check.parse("nope", "< 1").evaluate({"extras": {}})


def test_bundled_scenarios_load_and_roundtrip(tmp_path):
    scs = list_scenarios()
    assert {s.kind for s in scs} == set(KINDS)
    for sc in scs:
        p = tmp_path / f"{sc.name}.yaml"
        dump_scenario(sc, p)
        again = load_scenario(p)
        assert again.to_dict() == sc.to_dict()
        for chk in sc.check_list:
            assert chk.op in ("<=", "<", ">=", ">", "==")


def test_scenario_validation(tmp_path):
    with pytest.raises(ScenarioError):
        Scenario.from_dict({"name": "x", "kind": "bogus"})
    with pytest.raises(ScenarioError):
        Scenario.from_dict({"name": "x", "kind": "step_ramp", "colour": 1})
    with pytest.raises(ScenarioError):
        Scenario.from_dict({"name": "x", "kind": "step_ramp", "duration_s": 0})
    with pytest.raises(ScenarioError):
        resolve(str(tmp_path / "missing.yaml"))


def test_fault_spec_parsing():
    f = runner.FaultSpec.from_dict({"fault": "drop", "at_s": 1.5, "end_s": 2, "ids": [257]})
    assert (f.at_us, f.end_us, f.ids) == (1_500_000, 2_000_000, (257,))
    assert f.active(1_600_000) and not f.active(2_000_001)
    assert not runner.FaultSpec.from_dict({"fault": "load", "at_s": 0, "ncm": 1}).active(5)
    with pytest.raises(ValueError):
        runner.FaultSpec.from_dict({"fault": "gremlins", "at_s": 0})


# -- runs, CLI, export -------------------------------------------------------------

SHORT = {
    "name": "short_steps", "kind": "step_ramp", "seed": 2, "duration_s": 2.0,
    "stimulus": {"pulse": {"levels": [0.0, 60.0, 10.0], "times": [0.0, 0.8, 1.4]}},
    "plant": {"engine_running": False},
    "checks": {"settling_time_ms": "<= 130", "false_fault_count": "== 0"},
}


def _write(tmp_path, d, name="sc.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(d))
    return p


def test_cli_exit_codes(tmp_path, capsys):
    ok = _write(tmp_path, SHORT)
    assert cli.main(["run", str(ok)]) == 0
    bad = _write(tmp_path, {**SHORT, "checks": {"settling_time_ms": "< 1"}}, "bad.yaml")
    assert cli.main(["run", str(bad)]) == 1
    out = capsys.readouterr().out
    assert "FAIL  settling_time_ms < 1" in out
    assert cli.main(["run", str(tmp_path / "nope.yaml")]) == 2
    broken = tmp_path / "broken.yaml"
    broken.write_text("name: x\nkind: nonsense\n")
    assert cli.main(["run", str(broken)]) == 2


def test_list_scenarios(capsys):
    assert cli.main(["list-scenarios"]) == 0
    out = capsys.readouterr().out
    for name in ("step_ramp", "endurance", "fault_matrix", "open_loop_sweep", "full_chain_ramp"):
        assert name in out


def test_export_files_byte_identical_and_replay(tmp_path, capsys):
    sc = _write(tmp_path, SHORT)
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["run", str(sc), "--out-dir", str(a)]) == 0
    assert cli.main(["run", str(sc), "--out-dir", str(b)]) == 0
    for name in ("signal.csv", "bus.csv", "scenario.yaml"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    header = (a / "bus.csv").read_text().splitlines()[:2]
    assert header[0] == "time_us,id,pos,counter,err,fault_active"
    assert header[1].split(",")[1].startswith("0x")
    rep = json.loads((a / "report.json").read_text())
    assert rep["passed"] is True and rep["seed"] == 2
    assert set(rep["metrics"]) >= {"settling_time_ms", "overshoot_pct", "steady_error_pct",
                                   "dead_time_ms", "max_deviation_pct",
                                   "fault_detection_latency_ms", "false_fault_count"}
    capsys.readouterr()
    assert cli.main(["replay", str(a / "signal.csv")]) == 0
    out = capsys.readouterr().out
    assert "identical" in out and "bit-identical" in out
    # a tampered trace is caught
    text = (a / "signal.csv").read_text().splitlines()
    text[500] = text[500].replace(",1,1,0,0,1,0", ",1,1,0,0,1,1")
    cells = text[700].split(",")
    cells[3] = repr(float(cells[3]) + 0.1)
    text[700] = ",".join(cells)
    (a / "signal.csv").write_text("\n".join(text) + "\n")
    assert cli.main(["replay", str(a / "signal.csv")]) == 1


def test_seed_override_keeps_verdict(tmp_path):
    sc = _write(tmp_path, SHORT)
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["run", str(sc), "--seed", "11", "--out-dir", str(a)]) == 0
    assert cli.main(["run", str(sc), "--seed", "12", "--out-dir", str(b)]) == 0
    assert load_scenario(a / "scenario.yaml").seed == 11
    assert json.loads((b / "report.json").read_text())["seed"] == 12


def test_trace_csv_roundtrip(tmp_path):
    tr = runner.Trace(("time_us", "x", "id", "name"), int_columns=("time_us", "id"),
                      hex_columns=("id",), text_columns=("name",))
    tr.append((5, 0.1 + 0.2, 0x101, "belt"))
    tr.append((6, 1e-17, 0x102, "mcu"))
    p = X.write_trace(tr, tmp_path / "t.csv")
    cols = X.read_trace(p)[1]
    assert cols["x"] == [0.1 + 0.2, 1e-17]
    assert cols["id"] == [0x101, 0x102] and cols["name"] == ["belt", "mcu"]
    assert p.read_text().splitlines()[1] == "5,0.30000000000000004,0x101,belt"


def test_full_duration_flag_uses_long_duration():
    sc = cli._effective(resolve("endurance"), None, True)
    assert sc.duration_s == 216001.0 and sc.full_duration_s is None
    sc = cli._effective(resolve("endurance"), 9, False)
    assert sc.duration_s == 601.0 and sc.seed == 9


def test_single_dropped_frame_is_tolerated():
    d = {**SHORT, "faults": [{"fault": "drop", "at_s": 1.0, "end_s": 1.0}]}
    res = runner.run(Scenario.from_dict(d))
    bus = res.traces["bus"].cols
    tps_times = [t for t, i in zip(bus["time_us"], bus["id"]) if i == 0x101]
    assert 1_000_000 not in tps_times
    assert 980_000 in tps_times and 1_020_000 in tps_times
    assert res.report.false_fault_count == 0


def test_two_dropped_frames_exceed_stale_window():
    d = {**SHORT, "faults": [{"fault": "drop", "at_s": 1.0}]}
    res = runner.run(Scenario.from_dict(d))
    # last frame 0.98 s, received 200 us later, stale beyond 50 ms
    assert res.report.fault_detection_latency_ms == pytest.approx(31.0)
    assert res.traces["signal"].cols["mode"][-1] == M.MODE_CODES["failed"]


@pytest.mark.parametrize("name", ["step_ramp", "full_chain_ramp", "full_chain_random",
                                  "open_loop_sweep", "open_loop_sweep_ideal", "fault_matrix"])
def test_bundled_scenario_passes_its_checks(name):
    res = runner.run(resolve(name))
    failed = [str(c) for c, _, ok in res.checks if not ok]
    assert res.checks and not failed


def test_backends_give_identical_scenario_traces(tmp_path):
    import os
    import subprocess
    import sys

    sc = _write(tmp_path, SHORT)
    outs = {}
    for pure in ("0", "1"):
        out = tmp_path / f"pure{pure}"
        env = dict(os.environ, TBWSIM_PURE_PYTHON=pure)
        proc = subprocess.run([sys.executable, "-m", "tbwsim", "run", str(sc), "--out-dir", str(out)],
                              env=env, capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        outs[pure] = out
    assert json.loads((outs["1"] / "report.json").read_text())["backend"] == "python"
    for name in ("signal.csv", "bus.csv"):
        assert (outs["0"] / name).read_bytes() == (outs["1"] / name).read_bytes()
