"""Experiment configuration: flat ``key = value`` text with dotted sections.

Arrays are comma lists.  Unknown keys and malformed values are errors that
name the offending line; every default filled in for an omitted key is
reported in the provenance log.  ``serialize`` writes every key in a fixed
order, so load -> serialize -> load is the identity.

Example::

    name = heavy-rows
    scenario.intensities = 1.8, 3, 1.7, 3
    optimizer.replications = 5
"""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

from .model import ControlParams, CostConfig, Thresholds, validate_params
from .optimize import STEP_KINDS, GridSpec, OptimizerConfig
from .simulator import SimConfig
from .traffic import ArrivalModel, DepartureModel

log = logging.getLogger(__name__)

METHODS = ("IPA", "BF", "StaticBF")
TRAFFIC = ("exp", "disturbed")

REQUIRED = object()


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Field:
    key: str
    kind: str  # str | int | float | strs | floats
    default: Any
    size: Optional[int] = None
    choices: Tuple[str, ...] = ()


FIELDS: Tuple[Field, ...] = (
    Field("name", "str", "custom"),
    Field("methods", "strs", ("IPA", "BF", "StaticBF"), choices=METHODS),
    Field("seed", "int", 0),
    Field("output.dir", "str", "results"),
    Field("scenario.intensities", "floats", REQUIRED),
    Field("scenario.traffic", "strs", ("exp",), choices=TRAFFIC),
    Field("scenario.thresholds", "floats", (8.0, 8.0), size=2),
    Field("scenario.horizon", "float", 2000.0),
    Field("scenario.weight_low", "floats", (1.0, 1.0), size=2),
    Field("scenario.weight_high", "floats", (10.0, 10.0), size=2),
    Field("scenario.beta", "floats", (1.0, 1.0), size=2),
    Field("scenario.rate_window", "float", 10.0),
    Field("control.theta0", "floats", (20.0, 20.0, 10.0, 10.0), size=4),
    Field("control.theta_min1", "float", 10.0),
    Field("control.theta_max1", "float", 20.0),
    Field("control.theta_max2", "float", 40.0),
    Field("optimizer.step", "str", "normalized", choices=STEP_KINDS),
    Field("optimizer.gamma0", "float", 0.5),
    Field("optimizer.max_iter", "int", 100),
    Field("optimizer.eps", "float", 1e-3),
    Field("optimizer.replications", "int", 5),
    Field("optimizer.tail", "int", 10),
    Field("optimizer.patience", "int", 5),
    Field("grid.step", "float", 2.0),
    Field("grid.replications", "int", 10),
    Field("evaluation.replications", "int", 10),
    Field("bursts.road", "int", 1),
    Field("bursts.count", "int", 4),
    Field("bursts.duration", "float", 30.0),
    Field("bursts.mean_interarrival", "float", 2.0),
)
FIELD_BY_KEY = {f.key: f for f in FIELDS}


@dataclass(frozen=True)
class Scenario:
    index: int
    intensity: Tuple[float, float]  # mean interarrival times 1/alpha
    traffic: str

    @property
    def label(self) -> str:
        return f"{self.index:02d}_{self.traffic}_{self.intensity[0]:g}-{self.intensity[1]:g}"


@dataclass(frozen=True)
class ExperimentSpec:
    """Validated configuration values keyed as in the text format."""

    values: Tuple[Tuple[str, Any], ...]
    provenance: Tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        problems = _check(dict(self.values))
        if problems:
            raise ConfigError("; ".join(problems))

    def __getitem__(self, key: str) -> Any:
        return dict(self.values)[key]

    def replace(self, **changes) -> "ExperimentSpec":
        """Copy with ``changes`` applied; keys use ``_`` for ``.`` (``grid_step``)."""
        vals = dict(self.values)
        for k, v in changes.items():
            key = k if k in FIELD_BY_KEY else k.replace("_", ".", 1)
            if key not in FIELD_BY_KEY:
                raise ConfigError(f"unknown key {k!r}")
            vals[key] = _coerce(FIELD_BY_KEY[key], v)
        return ExperimentSpec(tuple((f.key, vals[f.key]) for f in FIELDS), self.provenance)

    @property
    def name(self) -> str:
        return self["name"]

    @property
    def methods(self) -> Tuple[str, ...]:
        return self["methods"]

    @property
    def seed(self) -> int:
        return self["seed"]

    @property
    def out_dir(self) -> Path:
        return Path(self["output.dir"])

    def scenarios(self) -> List[Scenario]:
        ia = self["scenario.intensities"]
        pairs = [(ia[k], ia[k + 1]) for k in range(0, len(ia), 2)]
        out = []
        for traffic in self["scenario.traffic"]:
            for pair in pairs:
                out.append(Scenario(len(out), pair, traffic))
        return out

    def params(self, theta: Optional[Sequence[float]] = None) -> ControlParams:
        return ControlParams(
            tuple(self["control.theta0"] if theta is None else theta),
            self["control.theta_min1"],
            self["control.theta_max1"],
            self["control.theta_max2"],
        )

    def arrivals(self, scenario: Scenario) -> ArrivalModel:
        if scenario.traffic == "exp":
            return ArrivalModel.poisson(scenario.intensity)
        return ArrivalModel.random_disturbed(
            scenario.intensity,
            self["bursts.count"],
            self["bursts.duration"],
            self["bursts.mean_interarrival"],
            queue=self["bursts.road"] - 1,
        )

    def sim_config(self, scenario: Scenario, seed: int = 0, theta: Optional[Sequence[float]] = None) -> SimConfig:
        return SimConfig(
            params=self.params(theta),
            thresholds=Thresholds(self["scenario.thresholds"]),
            arrivals=self.arrivals(scenario),
            departures=DepartureModel(self["scenario.beta"]),
            cost=CostConfig(self["scenario.horizon"], self["scenario.weight_low"], self["scenario.weight_high"]),
            seed=seed,
            rate_window=self["scenario.rate_window"],
        )

    def optimizer_config(self, seed: int) -> OptimizerConfig:
        return OptimizerConfig(
            theta0=self.params(),
            step=self["optimizer.step"],
            gamma0=self["optimizer.gamma0"],
            max_iter=self["optimizer.max_iter"],
            eps=self["optimizer.eps"],
            replications=self["optimizer.replications"],
            seed=seed,
            tail=self["optimizer.tail"],
            patience=self["optimizer.patience"],
        )

    def grid(self, seed: int) -> GridSpec:
        return GridSpec(self["grid.step"], self["grid.replications"], self.params(), seed)

    def config_hash(self) -> str:
        return hashlib.sha256(serialize(self).encode()).hexdigest()[:16]


def _check(vals: Dict[str, Any]) -> List[str]:
    out = []
    if not vals["methods"]:
        out.append("methods must not be empty")
    ia = vals["scenario.intensities"]
    if not ia or len(ia) % 2:
        out.append("scenario.intensities must list pairs of mean interarrival times (road 1, road 2)")
    elif min(ia) <= 0:
        out.append("scenario.intensities must be positive")
    if not vals["scenario.traffic"]:
        out.append("scenario.traffic must not be empty")
    if min(vals["scenario.thresholds"]) <= 0:
        out.append("scenario.thresholds must be positive")
    if vals["scenario.horizon"] <= 0:
        out.append("scenario.horizon must be positive")
    if min(vals["scenario.beta"]) <= 0:
        out.append("scenario.beta must be positive")
    if vals["scenario.rate_window"] <= 0:
        out.append("scenario.rate_window must be positive")
    if min(vals["scenario.weight_low"] + vals["scenario.weight_high"]) < 0:
        out.append("cost weights must be nonnegative")
    params = ControlParams(
        vals["control.theta0"], vals["control.theta_min1"], vals["control.theta_max1"], vals["control.theta_max2"]
    )
    out += [f"control.theta0: {p}" for p in validate_params(params)]
    for key in ("optimizer.gamma0", "optimizer.eps", "grid.step"):
        if not vals[key] > 0:
            out.append(f"{key} must be positive")
    for key in ("optimizer.max_iter", "optimizer.replications", "optimizer.tail", "optimizer.patience",
                "grid.replications", "evaluation.replications"):
        if vals[key] < 1:
            out.append(f"{key} must be >= 1")
    if vals["bursts.road"] not in (1, 2):
        out.append("bursts.road must be 1 or 2")
    if vals["bursts.count"] < 0:
        out.append("bursts.count must be >= 0")
    if vals["bursts.count"] and (vals["bursts.duration"] <= 0 or vals["bursts.mean_interarrival"] <= 0):
        out.append("bursts.duration and bursts.mean_interarrival must be positive")
    return out


def _coerce(f: Field, value: Any) -> Any:
    """Normalize a Python value to the field's canonical type."""
    if f.kind == "str":
        v = str(value)
        if f.choices and v not in f.choices:
            raise ConfigError(f"{f.key}: {v!r} is not one of {', '.join(f.choices)}")
        return v
    if f.kind == "int":
        if isinstance(value, bool) or int(value) != value:
            raise ConfigError(f"{f.key}: expected an integer, got {value!r}")
        return int(value)
    if f.kind == "float":
        return float(value)
    items = [value] if isinstance(value, (str, int, float)) else list(value)
    if f.kind == "floats":
        out = tuple(float(v) for v in items)
    else:
        out = tuple(str(v) for v in items)
        bad = [v for v in out if f.choices and v not in f.choices]
        if bad:
            raise ConfigError(f"{f.key}: {', '.join(bad)} not in {', '.join(f.choices)}")
    if f.size is not None and len(out) != f.size:
        raise ConfigError(f"{f.key}: expected {f.size} values, got {len(out)}")
    return out


def _parse_value(f: Field, raw: str, where: str) -> Any:
    try:
        if f.kind == "str":
            return _coerce(f, raw)
        if f.kind == "int":
            return _coerce(f, int(raw))
        if f.kind == "float":
            return float(raw)
        parts = [p.strip() for p in raw.split(",")] if raw.strip() else []
        if any(not p for p in parts):
            raise ConfigError(f"{f.key}: empty list item")
        return _coerce(f, [float(p) for p in parts] if f.kind == "floats" else parts)
    except ConfigError as e:
        raise ConfigError(f"{where}: {e}") from None
    except ValueError:
        raise ConfigError(f"{where}: {f.key} expects {f.kind}, got {raw!r}") from None


def parse_config(text: str, source: str = "<config>") -> ExperimentSpec:
    vals: Dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{source}:{lineno}"
        if "=" not in line:
            raise ConfigError(f"{where}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in FIELD_BY_KEY:
            raise ConfigError(f"{where}: unknown key {key!r}")
        if key in vals:
            raise ConfigError(f"{where}: duplicate key {key!r}")
        vals[key] = _parse_value(FIELD_BY_KEY[key], raw, where)
    return from_values(vals, source)


def from_values(vals: Dict[str, Any], source: str = "<values>") -> ExperimentSpec:
    """Spec from a partial key/value mapping; omitted keys take their defaults."""
    full, provenance = [], []
    for f in FIELDS:
        if f.key in vals:
            full.append((f.key, _coerce(f, vals[f.key])))
        elif f.default is REQUIRED:
            raise ConfigError(f"{source}: missing required key {f.key!r}")
        else:
            full.append((f.key, f.default))
            provenance.append(f"default {f.key} = {_format(f, f.default)}")
    unknown = set(vals) - set(FIELD_BY_KEY)
    if unknown:
        raise ConfigError(f"{source}: unknown keys {sorted(unknown)}")
    for line in provenance:
        log.info("%s: %s", source, line)
    return ExperimentSpec(tuple(full), tuple(provenance))


def load_config(path: Union[str, Path]) -> ExperimentSpec:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(), str(path))


def _format(f: Field, value: Any) -> str:
    if f.kind == "float":
        return repr(float(value))
    if f.kind == "floats":
        return ", ".join(repr(float(v)) for v in value)
    if f.kind == "strs":
        return ", ".join(value)
    return str(value)


def serialize(spec: ExperimentSpec) -> str:
    lines = [f"{k} = {_format(FIELD_BY_KEY[k], v)}" for k, v in spec.values]
    return "\n".join(lines) + "\n"
