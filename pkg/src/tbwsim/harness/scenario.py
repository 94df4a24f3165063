"""Scenario files: YAML mappings describing one experiment end to end."""

from __future__ import annotations

import copy
import operator
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import yaml

KINDS = ("endurance", "open_loop_sweep", "step_ramp", "full_chain", "fault_matrix")

_OPS = {"<=": operator.le, "<": operator.lt, ">=": operator.ge, ">": operator.gt,
        "==": operator.eq}


class ScenarioError(ValueError):
    pass


@dataclass
class Check:
    """``metric op limit``; ``metric`` may be a dotted path into the extras."""

    metric: str
    op: str
    limit: float

    @classmethod
    def parse(cls, metric: str, expr) -> "Check":
        if isinstance(expr, (int, float)):
            return cls(metric, "<=", float(expr))
        text = str(expr).strip()
        for op in ("<=", ">=", "==", "<", ">"):
            if text.startswith(op):
                return cls(metric, op, float(text[len(op):]))
        raise ScenarioError(f"bad check for {metric}: {expr!r}")

    def lookup(self, report: dict):
        cur = report
        for part in self.metric.split("."):
            if part not in cur and "extras" in cur and part in cur["extras"]:
                cur = cur["extras"]
            if not isinstance(cur, dict) or part not in cur:
                raise ScenarioError(f"unknown metric {self.metric!r}")
            cur = cur[part]
        return cur

    def evaluate(self, report: dict) -> tuple[object, bool]:
        value = self.lookup(report)
        ok = value is not None and _OPS[self.op](value, self.limit)
        return value, ok

    def __str__(self):
        return f"{self.metric} {self.op} {self.limit:g}"


@dataclass
class Scenario:
    name: str
    kind: str
    description: str = ""
    seed: int = 1
    duration_s: float = 1.0
    full_duration_s: float | None = None
    stimulus: dict = field(default_factory=dict)
    faults: list = field(default_factory=list)
    plant: dict = field(default_factory=dict)
    tps: dict = field(default_factory=dict)
    tva: dict = field(default_factory=dict)
    bus: dict = field(default_factory=dict)
    matrix: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)
    trace_period_ms: int = 1
    source: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ScenarioError(f"unknown scenario kind {self.kind!r}; expected one of {KINDS}")
        if self.duration_s <= 0:
            raise ScenarioError("duration_s must be positive")
        self.seed = int(self.seed)

    @property
    def check_list(self) -> list[Check]:
        return [Check.parse(k, v) for k, v in self.checks.items()]

    @property
    def base_dir(self) -> Path | None:
        return Path(self.source).parent if self.source else None

    def to_dict(self) -> dict:
        d = {k: copy.deepcopy(getattr(self, k)) for k in (
            "name", "kind", "description", "seed", "duration_s", "full_duration_s", "stimulus",
            "faults", "plant", "tps", "tva", "bus", "matrix", "checks", "trace_period_ms")}
        return {k: v for k, v in d.items() if v not in (None, {}, [], "")}

    @classmethod
    def from_dict(cls, d: dict, source: str | None = None) -> "Scenario":
        if not isinstance(d, dict):
            raise ScenarioError("scenario file must hold a mapping")
        unknown = (set(d) - set(cls.__dataclass_fields__)) | ({"source"} & set(d))
        if unknown:
            raise ScenarioError(f"unknown scenario keys: {sorted(unknown)}")
        try:
            return cls(**d, source=source)
        except TypeError as exc:
            raise ScenarioError(str(exc)) from None


def load_scenario(path) -> Scenario:
    p = Path(path)
    with open(p) as fh:
        data = yaml.safe_load(fh)
    return Scenario.from_dict(data, source=str(p))


def dump_scenario(sc: Scenario, path=None) -> str:
    text = yaml.safe_dump(sc.to_dict(), sort_keys=False)
    if path is not None:
        Path(path).write_text(text)
    return text


def scenario_dir() -> Path:
    return Path(str(resources.files("tbwsim") / "scenarios"))


def list_scenarios() -> list[Scenario]:
    return [load_scenario(p) for p in sorted(scenario_dir().glob("*.yaml"))]


def resolve(name_or_path: str) -> Scenario:
    """A path to a scenario file, or the name of a bundled one."""
    p = Path(name_or_path)
    if p.exists():
        return load_scenario(p)
    bundled = scenario_dir() / f"{name_or_path}.yaml"
    if bundled.exists():
        return load_scenario(bundled)
    raise ScenarioError(f"no scenario file or bundled scenario named {name_or_path!r}")
