"""YAML scenario files with line-anchored validation."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import yaml

from .analysis import CertifyOptions
from .controller import ControllerGains, TrajectorySpec
from .dynamics import CrankState, DynamicsParams
from .errors import ConfigError, FESCycleError
from .kinematics import RiderGeometry, max_abs_torque_ratio
from .simulator import Scenario

SWEEP_PARAMS = ("epsilon", "cadence", "gain")

_SECTIONS = ("geometry", "dynamics", "gains", "trajectory", "initial", "simulation", "analysis",
             "sweep", "meta")
_GAIN_KEYS = {"alpha", "k1", "k2", "k3", "k4", "epsilon", "epsilon_fraction", "clamp",
              "boundary_layer"}
_INITIAL_KEYS = {"q", "q_dot", "t"}
_SIM_KEYS = {"step_size", "revolutions", "duration", "record_stride", "seed"}
_SWEEP_KEYS = {"param", "gain", "grid", "revolutions", "workers"}


@dataclass(frozen=True)
class SweepOptions:
    param: str = "epsilon"
    # gain name when param == "gain"
    gain: str = "k1"
    grid: tuple[float, ...] = ()
    # length of the short run behind the steady-state column
    revolutions: float = 20.0
    workers: int = 1


@dataclass(frozen=True)
class RunConfig:
    scenario: Scenario
    analysis: CertifyOptions = field(default_factory=CertifyOptions)
    sweep: SweepOptions = field(default_factory=SweepOptions)
    source: str = "<defaults>"


class _Value:
    """A parsed YAML value with the line it came from."""

    __slots__ = ("value", "line")

    def __init__(self, value, line):
        self.value = value
        self.line = line


def _to_tree(node) -> _Value:
    line = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        out: dict[str, _Value] = {}
        for k, v in node.value:
            key = _to_tree(k).value
            if not isinstance(key, str):
                raise ConfigError(f"keys must be strings, got {key!r}", k.start_mark.line + 1)
            if key in out:
                raise ConfigError(f"duplicate key {key!r}", k.start_mark.line + 1)
            item = _to_tree(v)
            item.line = k.start_mark.line + 1
            out[key] = item
        return _Value(out, line)
    if isinstance(node, yaml.SequenceNode):
        return _Value([_to_tree(v) for v in node.value], line)
    return _Value(yaml.SafeLoader("").construct_object(node), line)


def _plain(v: _Value):
    if isinstance(v.value, dict):
        return {k: _plain(x) for k, x in v.value.items()}
    if isinstance(v.value, list):
        return [_plain(x) for x in v.value]
    return v.value


def _section(tree: dict, name: str, allowed: set[str]) -> dict[str, _Value]:
    sec = tree.get(name)
    if sec is None:
        return {}
    if not isinstance(sec.value, dict):
        raise ConfigError(f"section {name!r} must be a mapping", sec.line)
    for key, item in sec.value.items():
        if key not in allowed:
            raise ConfigError(f"unknown key {name}.{key} (allowed: {', '.join(sorted(allowed))})",
                              item.line)
    return sec.value


def _number(item: _Value, name: str, *, integer: bool = False, allow_null: bool = False):
    v = item.value
    if v is None and allow_null:
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{name} must be a number, got {v!r}", item.line)
    if not math.isfinite(v):
        raise ConfigError(f"{name} must be finite", item.line)
    if integer:
        if int(v) != v:
            raise ConfigError(f"{name} must be an integer, got {v!r}", item.line)
        return int(v)
    return float(v)


def _build(cls, sec: dict[str, _Value], name: str, line: int, **extra):
    kwargs = {}
    for key, item in sec.items():
        if key == "omega_bounds":
            vals = item.value
            if not isinstance(vals, list) or len(vals) != 2:
                raise ConfigError("dynamics.omega_bounds must be a two-element list", item.line)
            kwargs[key] = tuple(_number(x, "omega_bounds") for x in vals)
        elif key in ("omega_model", "clamp"):
            if not isinstance(item.value, str):
                raise ConfigError(f"{name}.{key} must be a string", item.line)
            kwargs[key] = item.value
        elif key == "disturbance_bound":
            kwargs[key] = _number(item, f"{name}.{key}", allow_null=True)
        else:
            kwargs[key] = _number(item, f"{name}.{key}")
    kwargs.update(extra)
    try:
        return cls(**kwargs)
    except FESCycleError as exc:
        raise ConfigError(f"{name}: {exc}", _blame(sec, str(exc), line)) from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: {exc}", line) from None


def _blame(sec: dict[str, _Value], message: str, default: int) -> int:
    # point at the first key named in the message
    for key, item in sec.items():
        if key in message:
            return item.line
    return default


def _field_names(cls) -> set[str]:
    return {f.name for f in dataclasses.fields(cls)}


def parse_config(text: str, source: str = "<string>", *, overlay: bool = True) -> RunConfig:
    """Parse a scenario file.

    With ``overlay`` (the default) the file only needs the keys it changes;
    everything else comes from the shipped default scenario.
    """
    base = _default_tree() if overlay else None
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None) or getattr(exc, "context_mark", None)
        line = mark.line + 1 if mark is not None else None
        problem = getattr(exc, "problem", None) or str(exc).splitlines()[0]
        raise ConfigError(f"malformed YAML in {source}: {problem}", line) from None
    if node is None:
        tree: dict[str, _Value] = {}
    else:
        root = _to_tree(node)
        if not isinstance(root.value, dict):
            raise ConfigError("config must be a mapping of sections", root.line)
        tree = root.value
    for key, item in tree.items():
        if key not in _SECTIONS:
            raise ConfigError(f"unknown section {key!r} (allowed: {', '.join(_SECTIONS)})", item.line)
    if base is not None:
        tree = _overlay(base, tree)

    def line_of(name):
        return tree[name].line if name in tree else None

    geo = _section(tree, "geometry", _field_names(RiderGeometry))
    defaults = DEFAULT_GEOMETRY
    geometry = _build(RiderGeometry, {**{k: _Value(v, None) for k, v in defaults.items()}, **geo},
                      "geometry", line_of("geometry"))
    dyn = _section(tree, "dynamics", _field_names(DynamicsParams))
    dynamics = _build(DynamicsParams, dyn, "dynamics", line_of("dynamics"))

    gsec = dict(_section(tree, "gains", _GAIN_KEYS))
    if "epsilon" in gsec and "epsilon_fraction" in gsec:
        raise ConfigError("give either gains.epsilon or gains.epsilon_fraction, not both",
                          gsec["epsilon_fraction"].line)
    frac_item = gsec.pop("epsilon_fraction", None)
    extra = {}
    if "epsilon" not in gsec:
        frac = 0.5 if frac_item is None else _number(frac_item, "gains.epsilon_fraction")
        if not 0 < frac < 1:
            raise ConfigError("gains.epsilon_fraction must lie in (0, 1)",
                              frac_item.line if frac_item else line_of("gains"))
        extra["epsilon"] = frac * max_abs_torque_ratio(geometry)
    gains = _build(ControllerGains, gsec, "gains", line_of("gains"), **extra)

    trajectory = _build(TrajectorySpec, _section(tree, "trajectory", _field_names(TrajectorySpec)),
                        "trajectory", line_of("trajectory"))
    init = _section(tree, "initial", _INITIAL_KEYS)
    q0 = _number(init["q"], "initial.q") if "q" in init else trajectory.q_start
    initial = CrankState(q0, _number(init["q_dot"], "initial.q_dot") if "q_dot" in init else 0.0,
                         _number(init["t"], "initial.t") if "t" in init else trajectory.t_start)

    sim = _section(tree, "simulation", _SIM_KEYS)
    kw: dict[str, Any] = {}
    for key, item in sim.items():
        integer = key in ("record_stride", "seed")
        kw[key] = _number(item, f"simulation.{key}", integer=integer,
                          allow_null=key in ("revolutions", "duration"))
    if "duration" in kw and kw["duration"] is not None and "revolutions" not in kw:
        kw["revolutions"] = None
    meta = _plain(tree["meta"]) if "meta" in tree else {}
    if not isinstance(meta, dict):
        raise ConfigError("section 'meta' must be a mapping", line_of("meta"))
    try:
        scenario = Scenario(geometry=geometry, dynamics=dynamics, gains=gains, trajectory=trajectory,
                            initial=initial, meta=meta, **kw)
    except ConfigError as exc:
        if "initial q" in str(exc):
            where = init["q"].line if "q" in init else line_of("initial")
        else:
            where = _blame(sim, str(exc), line_of("simulation"))
        raise ConfigError(f"scenario: {exc}", where) from None

    ana = _section(tree, "analysis", _field_names(CertifyOptions))
    akw = {}
    for key, item in ana.items():
        integer = key in ("n_samples", "seed", "n_phases")
        akw[key] = _number(item, f"analysis.{key}", integer=integer,
                           allow_null=key in ("z_max", "dt_max_off", "a3_target"))
    analysis = CertifyOptions(**akw)

    sw = _section(tree, "sweep", _SWEEP_KEYS)
    skw: dict[str, Any] = {}
    for key, item in sw.items():
        if key in ("param", "gain"):
            skw[key] = str(item.value)
        elif key == "grid":
            if not isinstance(item.value, list):
                raise ConfigError("sweep.grid must be a list of numbers", item.line)
            skw[key] = tuple(_number(x, "sweep.grid") for x in item.value)
        else:
            skw[key] = _number(item, f"sweep.{key}", integer=key == "workers")
    sweep = SweepOptions(**skw)
    check_sweep(sweep, sw["param"].line if "param" in sw else None)
    return RunConfig(scenario, analysis, sweep, source)


def _default_tree() -> dict[str, _Value]:
    text = resources.files("fescycle").joinpath("data/default.yaml").read_text()
    tree = _to_tree(yaml.compose(text, Loader=yaml.SafeLoader)).value
    # default entries carry no line number of the user's file
    for sec in tree.values():
        sec.line = None
        if isinstance(sec.value, dict):
            for item in sec.value.values():
                item.line = None
    return tree


def _overlay(base: dict[str, _Value], user: dict[str, _Value]) -> dict[str, _Value]:
    out = dict(base)
    for name, sec in user.items():
        if name not in base or not isinstance(sec.value, dict) or not isinstance(base[name].value, dict):
            out[name] = sec
            continue
        merged = dict(base[name].value)
        if name == "gains" and ("epsilon" in sec.value or "epsilon_fraction" in sec.value):
            merged.pop("epsilon", None)
            merged.pop("epsilon_fraction", None)
        if name == "simulation" and ("revolutions" in sec.value or "duration" in sec.value):
            merged.pop("revolutions", None)
            merged.pop("duration", None)
        if name == "sweep" and "param" in sec.value:
            merged.pop("grid", None)
        merged.update(sec.value)
        out[name] = _Value(merged, sec.line)
    return out


def check_sweep(sweep: SweepOptions, line=None) -> None:
    if sweep.param not in SWEEP_PARAMS:
        raise ConfigError(f"sweep parameter must be one of {SWEEP_PARAMS}, got {sweep.param!r}", line)
    if sweep.param == "gain" and sweep.gain not in ("alpha", "k1", "k2", "k3", "k4"):
        raise ConfigError(f"sweep gain must be alpha or k1..k4, got {sweep.gain!r}", line)
    if sweep.workers < 1:
        raise ConfigError("sweep.workers must be >= 1", line)


DEFAULT_GEOMETRY = dict(thigh_length=0.40, shank_length=0.43, crank_length=0.17,
                        hip_horizontal=0.60, hip_vertical=0.12)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, str(path))


def packaged_config(name: str = "default") -> RunConfig:
    """Load one of the scenario files shipped with the package ("default" or "certified")."""
    text = resources.files("fescycle").joinpath(f"data/{name}.yaml").read_text()
    return parse_config(text, f"{name}.yaml", overlay=False)
