"""Declarative experiment description and its YAML scenario-file format."""

from __future__ import annotations

import copy
import math
from pathlib import Path
from typing import Any, Literal, Optional, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .plants import PARAMS_BY_PLANT

Matrix = list[list[float]]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class OutputWeightedCov(_Strict):
    """``output_weight * C' C`` (C is the plant output matrix)."""

    output_weight: float = Field(gt=0)


CovSpec = Union[float, list[float], Matrix, OutputWeightedCov]


class PlantSpec(_Strict):
    type: Literal["cruise", "suspension", "aircraft", "motor_position", "motor_speed"]
    params: dict[str, float] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _check_params(self):
        allowed = PARAMS_BY_PLANT[self.type].__dataclass_fields__
        unknown = set(self.params) - set(allowed)
        if unknown:
            raise ValueError(f"unknown {self.type} parameter(s): {sorted(unknown)}")
        return self


class LqrSpec(_Strict):
    output_weight: float = Field(50.0, gt=0)  # Qw = output_weight * C' C
    Rw: float = Field(1.0, gt=0)


class ControllerSpec(_Strict):
    type: Literal["pole_placement", "lqr", "none"] = "pole_placement"
    poles: list[str] = Field(default_factory=list)
    lqr: LqrSpec = Field(default_factory=LqrSpec)
    input_index: int = Field(0, ge=0)
    output_index: int = Field(0, ge=0)
    precompensate: bool = True
    feedback: Literal["estimate", "truth"] = "estimate"
    feedback_node: int = Field(0, ge=0)
    # continuous: gains from the continuous model; discrete: poles mapped by
    # z = exp(p ts) and placed on the ZOH model
    design: Literal["continuous", "discrete"] = "continuous"
    integral_action: bool = False  # integrate the tracked output; needs one extra pole

    @field_validator("poles", mode="before")
    @classmethod
    def _poles_as_text(cls, v):
        return [str(p) for p in v]

    @field_validator("poles")
    @classmethod
    def _parse_poles(cls, v):
        for p in v:
            try:
                complex(p.replace(" ", ""))
            except ValueError:
                raise ValueError(f"cannot parse pole {p!r}") from None
        return v

    def pole_values(self) -> list[complex]:
        return [complex(p.replace(" ", "")) for p in self.poles]


class Segment(_Strict):
    start: float = Field(ge=0)  # s
    value: float


class DisturbanceSpec(_Strict):
    input_index: int = Field(1, ge=0)
    schedule: list[Segment] = Field(default_factory=list)


class UtSpec(_Strict):
    alpha: float = Field(1e-3, ge=1e-4, le=1.0)
    beta: float = 2.0
    kappa: Union[float, Literal["3-L"]] = 0.0


class FilterSpec(_Strict):
    Q: CovSpec = 0.1
    R: CovSpec = 0.5
    p0: float = Field(50.0, gt=0)  # P0 = p0 * I unless P0 given
    P0: Optional[Matrix] = None
    x0: Optional[list[float]] = None  # initial estimate, default zeros
    ut: UtSpec = Field(default_factory=UtSpec)


class TruthSpec(_Strict):
    x0: Optional[list[float]] = None  # default zeros
    process_noise: bool = False  # add q ~ N(0, Q) to the true state
    measurement_noise: bool = True


class NetworkSpec(_Strict):
    nodes: int = Field(4, ge=1)
    topology: Literal["complete", "ring", "path", "star", "explicit"] = "complete"
    Pi: Optional[Matrix] = None
    adjacency: Optional[list[list[int]]] = None
    l: int = Field(5, ge=0)
    output_masks: Optional[list[list[bool]]] = None

    @model_validator(mode="after")
    def _check_explicit(self):
        if self.topology == "explicit" and self.Pi is None:
            raise ValueError("explicit topology requires Pi")
        if self.Pi is not None and (len(self.Pi) != self.nodes
                                    or any(len(r) != self.nodes for r in self.Pi)):
            raise ValueError(f"Pi must be {self.nodes}x{self.nodes}")
        if self.output_masks is not None and len(self.output_masks) != self.nodes:
            raise ValueError("need one output mask per node")
        return self


class MetricsSpec(_Strict):
    error_bound: Optional[float] = Field(None, gt=0)  # bound on per-node ||x_hat - x_true||
    steady_window: float = Field(1.0, gt=0)  # s, window for steady-state error


class Scenario(_Strict):
    name: str = "scenario"
    plant: PlantSpec
    ts: float = Field(gt=0)  # s
    duration: float = Field(gt=0)  # s
    rng_seed: int = Field(0, ge=0, lt=2 ** 64)
    controller: ControllerSpec = Field(default_factory=ControllerSpec)
    references: list[Segment] = Field(default_factory=lambda: [Segment(start=0.0, value=0.0)])
    disturbance: Optional[DisturbanceSpec] = None
    filter: FilterSpec = Field(default_factory=FilterSpec)
    truth: TruthSpec = Field(default_factory=TruthSpec)
    network: NetworkSpec = Field(default_factory=NetworkSpec)
    metrics: MetricsSpec = Field(default_factory=MetricsSpec)

    @model_validator(mode="after")
    def _check_schedules(self):
        for seg in self.references + (self.disturbance.schedule if self.disturbance else []):
            if seg.start > self.duration:
                raise ValueError(f"schedule start {seg.start} lies beyond duration {self.duration}")
        starts = [s.start for s in self.references]
        if starts != sorted(starts):
            raise ValueError("reference segments must be sorted by start time")
        if self.controller.feedback_node >= self.network.nodes:
            raise ValueError("controller.feedback_node must index an existing node")
        if not math.isclose(self.duration / self.ts, round(self.duration / self.ts), rel_tol=1e-9):
            raise ValueError("duration must be an integer multiple of ts")
        return self

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.ts))

    def to_dict(self) -> dict:
        return self.model_dump(mode="json", exclude_none=True)


# --------------------------------------------------------------------------- #
# Schedules
# --------------------------------------------------------------------------- #


def schedule_value(schedule: list[Segment], t: float, default: float = 0.0) -> float:
    value = default
    for seg in schedule:
        if t + 1e-12 >= seg.start:
            value = seg.value
    return value


# --------------------------------------------------------------------------- #
# File I/O
# --------------------------------------------------------------------------- #


class ScenarioError(ValueError):
    """Scenario failed to parse or validate; ``diagnostics`` lists one line per problem."""

    def __init__(self, diagnostics: list[str]):
        super().__init__("\n".join(diagnostics))
        self.diagnostics = diagnostics


def _line_index(node, prefix=(), out=None) -> dict[tuple, int]:
    if out is None:
        out = {}
    if isinstance(node, yaml.MappingNode):
        for key, value in node.value:
            path = prefix + (key.value,)
            out[path] = key.start_mark.line + 1
            _line_index(value, path, out)
    elif isinstance(node, yaml.SequenceNode):
        for i, value in enumerate(node.value):
            path = prefix + (i,)
            out[path] = value.start_mark.line + 1
            _line_index(value, path, out)
    return out


def _lookup_line(lines: dict[tuple, int], loc: tuple) -> int | None:
    loc = tuple(int(p) if isinstance(p, str) and p.isdigit() else p for p in loc)
    while loc:
        if loc in lines:
            return lines[loc]
        loc = loc[:-1]
    return None


def _diagnostics(err: ValidationError, lines: dict[tuple, int], source: str) -> list[str]:
    out = []
    for e in err.errors():
        # drop union-branch tags such as 'float' or 'list[float]'
        loc = tuple(p for p in e["loc"] if not (isinstance(p, str) and ("[" in p or p in ("float", "int", "str", "OutputWeightedCov", "function-after"))))
        field = ".".join(str(p) for p in loc) or "<root>"
        line = _lookup_line(lines, loc)
        where = f"{source}:{line}" if line else source
        out.append(f"{where}: {field}: {e['msg']}")
    return list(dict.fromkeys(out))


def set_dotted(data: dict, dotted: str, value: Any) -> None:
    """Assign ``value`` at a dotted path such as ``network.l``, creating mappings."""
    parts = dotted.split(".")
    cur = data
    for part in parts[:-1]:
        if isinstance(cur, list):
            cur = cur[int(part)]
            continue
        if part not in cur or cur[part] is None:
            cur[part] = {}
        cur = cur[part]
    if isinstance(cur, list):
        cur[int(parts[-1])] = value
    else:
        cur[parts[-1]] = value


def parse_override(text: str) -> tuple[str, Any]:
    if "=" not in text:
        raise ScenarioError([f"--set {text!r}: expected key=value"])
    key, raw = text.split("=", 1)
    return key.strip(), yaml.safe_load(raw)


def load_scenario_text(text: str, source: str = "<string>", overrides: list[str] | None = None) -> Scenario:
    try:
        root = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = f":{mark.line + 1}" if mark else ""
        raise ScenarioError([f"{source}{line}: YAML syntax error: {exc}"]) from None
    if not isinstance(data, dict):
        raise ScenarioError([f"{source}: top level must be a mapping"])
    lines = _line_index(root) if root is not None else {}
    for item in overrides or []:
        key, value = parse_override(item)
        try:
            set_dotted(data, key, value)
        except (IndexError, ValueError, TypeError, KeyError):
            raise ScenarioError([f"--set {item}: cannot assign path {key!r}"]) from None
    try:
        return Scenario.model_validate(data)
    except ValidationError as err:
        raise ScenarioError(_diagnostics(err, lines, source)) from None


def load_scenario(path, overrides: list[str] | None = None) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError([f"{path}: {exc.strerror}"]) from None
    return load_scenario_text(text, str(path), overrides)


def dump_scenario(scenario: Scenario) -> str:
    return yaml.safe_dump(scenario.to_dict(), sort_keys=False, default_flow_style=None)


def with_overrides(scenario: Scenario, overrides: dict[str, Any]) -> Scenario:
    data = copy.deepcopy(scenario.to_dict())
    for key, value in overrides.items():
        set_dotted(data, key, value)
    return Scenario.model_validate(data)


# --------------------------------------------------------------------------- #
# Covariance specs
# --------------------------------------------------------------------------- #


def resolve_cov(spec, dim: int, C: np.ndarray) -> np.ndarray:
    if isinstance(spec, OutputWeightedCov):
        return spec.output_weight * C.T @ C
    arr = np.array(spec, dtype=float)
    if arr.ndim == 0:
        return float(arr) * np.eye(dim)
    if arr.ndim == 1:
        return np.diag(arr)
    return arr


PRESET_DIR = Path(__file__).parent / "presets"
PRESETS = ("cruise", "suspension", "aircraft", "motor_speed", "motor_position")


def preset_path(name: str) -> Path:
    return PRESET_DIR / f"{name}.scn"


def load_preset(name: str, overrides: list[str] | None = None) -> Scenario:
    return load_scenario(preset_path(name), overrides)
