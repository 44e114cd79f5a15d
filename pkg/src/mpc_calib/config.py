"""YAML run configuration with schema validation and line-numbered errors.

Every section is optional; omitted keys take the defaults of the matching
dataclass. Unknown keys are rejected. See ``configs/default.yaml``.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .calib import (
    CALIBRATION_WAYPOINTS,
    VALIDATION_WAYPOINTS,
    ExperimentSpec,
    FixedDesign,
    ThetaSpec,
    cartpole_theta_spec,
)
from .glis import GlisSettings, PsoSettings
from .plant import CartPoleParams, NoiseSpec
from .qp import QpSettings


class ConfigError(ValueError):
    """Invalid configuration; the message carries ``file:line`` when known."""


@dataclass(frozen=True)
class Seeds:
    calibration_noise: int = 1
    validation_noise: int = 2
    glis: int = 0


@dataclass
class RunConfig:
    plant: CartPoleParams = field(default_factory=CartPoleParams)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    calibration: ExperimentSpec = field(default_factory=ExperimentSpec)
    validation: ExperimentSpec = field(
        default_factory=lambda: ExperimentSpec(waypoints=VALIDATION_WAYPOINTS)
    )
    design: FixedDesign = field(default_factory=FixedDesign)
    theta: ThetaSpec = field(default_factory=cartpole_theta_spec)
    glis: GlisSettings = field(default_factory=GlisSettings)
    seeds: Seeds = field(default_factory=Seeds)
    out_dir: str = "runs/default"
    source: str = "<defaults>"

    def calibration_experiment(self) -> ExperimentSpec:
        return dataclasses.replace(
            self.calibration, plant=self.plant,
            noise=dataclasses.replace(self.noise, seed=self.seeds.calibration_noise),
        )

    def validation_experiment(self) -> ExperimentSpec:
        return dataclasses.replace(
            self.validation, plant=self.plant,
            noise=dataclasses.replace(self.noise, seed=self.seeds.validation_noise),
        )

    def with_overrides(self, budget=None, seed=None, out_dir=None) -> "RunConfig":
        cfg = dataclasses.replace(self)
        if budget is not None:
            if budget < 1:
                raise ConfigError(f"budget must be >= 1, got {budget}")
            try:
                cfg.glis = dataclasses.replace(cfg.glis, n_max=budget)
            except ValueError as exc:
                raise ConfigError(f"budget {budget}: {exc}") from exc
            if budget < cfg.glis.initial_samples(len(cfg.theta)) + 1:
                raise ConfigError(
                    f"budget {budget} leaves no room after "
                    f"{cfg.glis.initial_samples(len(cfg.theta))} initial samples"
                )
        if seed is not None:
            cfg.seeds = Seeds(calibration_noise=seed, validation_noise=seed + 1, glis=seed)
        if out_dir is not None:
            cfg.out_dir = str(out_dir)
        return cfg


# -- YAML with line numbers -------------------------------------------------


class _Node:
    """A parsed value together with the source line of its YAML node."""

    __slots__ = ("value", "line")

    def __init__(self, value, line):
        self.value = value
        self.line = line


def _convert(node):
    line = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        out = {}
        for k, v in node.value:
            if not isinstance(k, yaml.ScalarNode):
                raise ConfigError(f"{k.start_mark.line + 1}: mapping keys must be plain scalars")
            key = k.value
            if key in out:
                raise ConfigError(f"{k.start_mark.line + 1}: duplicate key {key!r}")
            out[key] = _convert(v)
        return _Node(out, line)
    if isinstance(node, yaml.SequenceNode):
        return _Node([_convert(v) for v in node.value], line)
    return _Node(yaml.safe_load(yaml.serialize(node)), line)


class _Ctx:
    def __init__(self, source):
        self.source = source

    def fail(self, node: _Node | None, path: str, msg: str):
        where = f"{self.source}:{node.line}" if node is not None else self.source
        raise ConfigError(f"{where}: {path}: {msg}")


def _number(ctx, node, path, integer=False):
    v = node.value
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        # YAML 1.1 leaves "1e-16" as a string; accept it explicitly
        if isinstance(v, str):
            try:
                v = float(v)
            except ValueError:
                ctx.fail(node, path, f"expected a number, got {node.value!r}")
        else:
            ctx.fail(node, path, f"expected a number, got {node.value!r}")
    if integer:
        if float(v) != int(v):
            ctx.fail(node, path, f"expected an integer, got {v!r}")
        return int(v)
    return float(v)


def _section(ctx, node, path, cls, overrides=None, special=None):
    """Build dataclass ``cls`` from mapping ``node``; unknown keys are errors."""
    special = special or {}
    if node is None:
        kwargs = {}
    else:
        if not isinstance(node.value, dict):
            ctx.fail(node, path, "expected a mapping")
        names = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, child in node.value.items():
            sub = f"{path}.{key}"
            if key in special:
                kwargs[key] = special[key](ctx, child, sub)
                continue
            if key not in names:
                ctx.fail(child, sub, f"unknown key (allowed: {', '.join(sorted(set(names) | set(special)))})")
            default = getattr(cls(), key) if key not in (overrides or {}) else overrides[key]
            if isinstance(default, bool):
                if not isinstance(child.value, bool):
                    ctx.fail(child, sub, "expected true or false")
                kwargs[key] = child.value
            elif isinstance(default, int) and not isinstance(default, bool):
                kwargs[key] = _number(ctx, child, sub, integer=True)
            elif isinstance(default, float):
                kwargs[key] = _number(ctx, child, sub)
            elif isinstance(default, str):
                if not isinstance(child.value, str):
                    ctx.fail(child, sub, "expected a string")
                kwargs[key] = child.value
            elif default is None:
                kwargs[key] = None if child.value is None else _number(ctx, child, sub, integer=True)
            else:
                ctx.fail(child, sub, "cannot be set here")
    try:
        return cls(**{**(overrides or {}), **kwargs})
    except (ValueError, TypeError) as exc:
        ctx.fail(node, path, str(exc))


def _waypoints(ctx, node, path):
    if not isinstance(node.value, list) or not node.value:
        ctx.fail(node, path, "expected a non-empty list of [time, position] pairs")
    out = []
    for i, item in enumerate(node.value):
        if not isinstance(item.value, list) or len(item.value) != 2:
            ctx.fail(item, f"{path}[{i}]", "expected [time, position]")
        out.append(tuple(_number(ctx, c, f"{path}[{i}]") for c in item.value))
    times = [t for t, _ in out]
    if any(b < a for a, b in zip(times, times[1:])):
        ctx.fail(node, path, "waypoint times must be nondecreasing")
    return tuple(out)


def _x0(ctx, node, path):
    if not isinstance(node.value, list) or len(node.value) != 4:
        ctx.fail(node, path, "expected [p, p_dot, phi, phi_dot]")
    return tuple(_number(ctx, c, path) for c in node.value)


def _experiment(ctx, node, path, default_waypoints):
    return _section(
        ctx, node, path, ExperimentSpec,
        overrides={"waypoints": default_waypoints},
        special={"waypoints": _waypoints, "x0": _x0},
    )


def _theta(ctx, node, path) -> ThetaSpec:
    """Bound overrides by coordinate name, e.g. ``Np: {lower: 10, upper: 100}``."""
    base = cartpole_theta_spec()
    if node is None:
        return base
    if not isinstance(node.value, dict):
        ctx.fail(node, path, "expected a mapping of coordinate name to bounds")
    coords = {c.name: c for c in base.coords}
    for name, child in node.value.items():
        sub = f"{path}.{name}"
        if name not in coords:
            ctx.fail(child, sub, f"unknown coordinate (known: {', '.join(base.names)})")
        if not isinstance(child.value, dict):
            ctx.fail(child, sub, "expected {lower: ..., upper: ...}")
        kw = {}
        for key, val in child.value.items():
            if key not in ("lower", "upper"):
                ctx.fail(val, f"{sub}.{key}", "only lower and upper may be overridden")
            kw[key] = _number(ctx, val, f"{sub}.{key}")
        try:
            coords[name] = dataclasses.replace(coords[name], **kw)
        except ValueError as exc:
            ctx.fail(child, sub, str(exc))
    return ThetaSpec(tuple(coords[c.name] for c in base.coords))


def _design(ctx, node, path) -> FixedDesign:
    def qp(ctx, n, p):
        return _section(ctx, n, p, QpSettings)

    def du_max(ctx, n, p):
        v = n.value
        if isinstance(v, str) and v.lower() in (".inf", "inf"):
            return math.inf
        return _number(ctx, n, p)

    return _section(ctx, node, path, FixedDesign, special={"qp": qp, "du_max": du_max})


def _glis(ctx, node, path) -> GlisSettings:
    def pso(ctx, n, p):
        return _section(ctx, n, p, PsoSettings)

    return _section(ctx, node, path, GlisSettings, special={"pso": pso})


TOP_LEVEL = ("plant", "noise", "calibration", "validation", "design", "theta", "glis", "seeds", "out_dir")


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    ctx = _Ctx(source)
    try:
        root = yaml.compose(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = f":{mark.line + 1}" if mark is not None else ""
        raise ConfigError(f"{source}{line}: YAML syntax error: {getattr(exc, 'problem', exc)}") from exc
    if root is None:
        return RunConfig(source=source)
    try:
        tree = _convert(root)
    except ConfigError as exc:
        raise ConfigError(f"{source}:{exc}") from None
    if not isinstance(tree.value, dict):
        ctx.fail(tree, "<root>", "expected a mapping at top level")
    top = tree.value
    for key, child in top.items():
        if key not in TOP_LEVEL:
            ctx.fail(child, key, f"unknown section (allowed: {', '.join(TOP_LEVEL)})")
    noise_node = top.get("noise")
    if noise_node is not None and isinstance(noise_node.value, dict) and "seed" in noise_node.value:
        ctx.fail(noise_node.value["seed"], "noise.seed", "set seeds in the 'seeds' section")
    cfg = RunConfig(
        plant=_section(ctx, top.get("plant"), "plant", CartPoleParams),
        noise=_section(ctx, top.get("noise"), "noise", NoiseSpec),
        calibration=_experiment(ctx, top.get("calibration"), "calibration", CALIBRATION_WAYPOINTS),
        validation=_experiment(ctx, top.get("validation"), "validation", VALIDATION_WAYPOINTS),
        design=_design(ctx, top.get("design"), "design"),
        theta=_theta(ctx, top.get("theta"), "theta"),
        glis=_glis(ctx, top.get("glis"), "glis"),
        seeds=_section(ctx, top.get("seeds"), "seeds", Seeds),
        source=source,
    )
    if "out_dir" in top:
        node = top["out_dir"]
        if not isinstance(node.value, str):
            ctx.fail(node, "out_dir", "expected a string")
        cfg.out_dir = node.value
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc.strerror}") from exc
    return parse_config(text, str(path))


def default_config_path() -> Path:
    return Path(__file__).with_name("configs") / "default.yaml"
