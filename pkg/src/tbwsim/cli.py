"""Command line entry point: ``tbwsim run|list-scenarios|replay``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .harness import export as X
from .harness import runner
from .harness.scenario import ScenarioError, list_scenarios, load_scenario, resolve


def _effective(sc, seed: int | None, full: bool):
    """Scenario as actually run: seed override applied, duration fixed."""
    changes = {"full_duration_s": None}
    if seed is not None:
        changes["seed"] = seed
    if full and sc.full_duration_s:
        changes["duration_s"] = sc.full_duration_s
    return dataclasses.replace(sc, **changes)


def cmd_run(args) -> int:
    try:
        sc = _effective(resolve(args.scenario), args.seed, args.full_duration)
    except (ScenarioError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return X.EXIT_ERROR
    res = runner.run(sc)
    for line in X.summary_lines(res):
        print(line)
    if args.out_dir:
        try:
            files = X.export(res, args.out_dir)
        except OSError as exc:
            print(f"error: cannot write to {args.out_dir}: {exc}", file=sys.stderr)
            return X.EXIT_ERROR
        print(f"wrote {', '.join(sorted(files.values()))} to {args.out_dir}")
    return X.exit_code(res)


def cmd_list(args) -> int:
    for sc in list_scenarios():
        desc = " ".join(sc.description.split())
        print(f"{sc.name:24s} {sc.kind:16s} {desc}")
    return X.EXIT_PASS


def cmd_replay(args) -> int:
    """Re-score a stored trace and re-simulate it; both must match exactly."""
    trace_path = Path(args.trace)
    run_dir = trace_path.parent
    try:
        sc = load_scenario(run_dir / "scenario.yaml")
        stored = trace_path.read_text()
    except (ScenarioError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return X.EXIT_ERROR
    name = trace_path.stem
    ok = True
    report_path = run_dir / "report.json"
    if name in ("signal", "sweep", "matrix") and report_path.exists():
        _, cols = X.read_trace(trace_path)
        again = json.loads(json.dumps(runner.recompute(sc, name, cols).to_dict()))
        same = again == json.loads(report_path.read_text())["metrics"]
        print(f"metrics recomputed from {trace_path.name}: {'identical' if same else 'DIFFERENT'}")
        ok &= same
    res = runner.run(sc)
    if name not in res.traces:
        print(f"error: scenario produces no trace named {name!r}", file=sys.stderr)
        return X.EXIT_ERROR
    same = X.format_trace(res.traces[name]) == stored
    print(f"re-simulated {trace_path.name}: {'bit-identical' if same else 'DIFFERENT'}")
    ok &= same
    return X.EXIT_PASS if ok else X.EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tbwsim", description="Throttle-by-wire simulator")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a scenario file or bundled scenario")
    p.add_argument("scenario", help="path to a scenario YAML file or a bundled scenario name")
    p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p.add_argument("--out-dir", default=None, help="write traces and report here")
    p.add_argument("--full-duration", action="store_true",
                   help="use the scenario's full (non desk-scale) duration")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("list-scenarios", help="list bundled scenarios")
    p.set_defaults(func=cmd_list)

    p = sub.add_parser("replay", help="verify a stored trace against a fresh run")
    p.add_argument("trace", help="CSV trace inside a run output directory")
    p.set_defaults(func=cmd_replay)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
