"""CSV traces, JSON reports and the files a run leaves in its output directory."""

from __future__ import annotations

import json
from pathlib import Path

from .. import kernels
from .metrics import DEFINITIONS
from .runner import RunResult, Trace
from .scenario import dump_scenario

EXIT_PASS = 0
EXIT_FAIL = 1
EXIT_ERROR = 2


def format_trace(trace: Trace) -> str:
    """CSV text. Floats use ``repr`` so they read back bit-exact."""
    fmts = []
    for c in trace.columns:
        if c in trace.hex_columns:
            fmts.append(lambda v: f"0x{int(v):03x}")
        elif c in trace.int_columns:
            fmts.append(lambda v: str(int(v)))
        elif c in trace.text_columns:
            fmts.append(str)
        else:
            fmts.append(repr)
    lines = [",".join(trace.columns)]
    for row in trace.rows():
        lines.append(",".join(f(v) for f, v in zip(fmts, row)))
    return "\n".join(lines) + "\n"


def write_trace(trace: Trace, path) -> Path:
    p = Path(path)
    p.write_text(format_trace(trace))
    return p


def read_trace(path) -> tuple[tuple[str, ...], dict]:
    """Columns and values; anything that parses as a number becomes a float."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        cols: dict = {c: [] for c in header}
        for line in fh:
            for c, v in zip(header, line.rstrip("\n").split(",")):
                if v.startswith("0x"):
                    cols[c].append(int(v, 16))
                    continue
                try:
                    cols[c].append(float(v))
                except ValueError:
                    cols[c].append(v)
    return tuple(header), cols


def report_dict(res: RunResult, files: dict | None = None) -> dict:
    sc = res.scenario
    return {
        "scenario": sc.name,
        "kind": sc.kind,
        "seed": sc.seed,
        "duration_s": sc.duration_s,
        "definitions": DEFINITIONS,
        "metrics": res.report.to_dict(),
        "checks": [{"check": str(c), "value": v, "passed": ok} for c, v, ok in res.checks],
        "passed": res.passed,
        "diagnostics": res.diagnostics,
        "backend": kernels.BACKEND,
        "runtime_s": round(res.runtime_s, 3),
        "files": files or {},
    }


def export(res: RunResult, out_dir) -> dict:
    """Write every trace, the effective scenario and the report to ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    for name, trace in res.traces.items():
        files[name] = write_trace(trace, out / f"{name}.csv").name
    dump_scenario(res.scenario, out / "scenario.yaml")
    files["scenario"] = "scenario.yaml"
    rep = report_dict(res, files)
    (out / "report.json").write_text(json.dumps(rep, indent=2) + "\n")
    files["report"] = "report.json"
    return files


def exit_code(res: RunResult) -> int:
    return EXIT_PASS if res.passed else EXIT_FAIL


def summary_lines(res: RunResult) -> list[str]:
    sc = res.scenario
    lines = [f"scenario {sc.name} ({sc.kind}) seed={sc.seed} duration={sc.duration_s:g}s "
             f"runtime={res.runtime_s:.2f}s backend={kernels.BACKEND}"]
    for chk, value, ok in res.checks:
        shown = f"{value:.6g}" if isinstance(value, float) else str(value)
        lines.append(f"  {'PASS' if ok else 'FAIL'}  {chk}  (got {shown})")
    lines.append("PASS" if res.passed else "FAIL")
    return lines
