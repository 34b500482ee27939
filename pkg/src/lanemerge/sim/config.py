"""Scenario configuration: dataclasses plus YAML loading and validation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .geometry import LanePath, RoadBounds
from .types import (
    ActionLimits,
    Behavior,
    Footprint,
    IdmParams,
    RewardConstants,
)

STATE_FIELDS = ("x", "y", "theta", "v")


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending key path."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass
class AgentSpec:
    behavior: Behavior
    initial_state_range: dict[str, tuple[float, float]]
    reference_path: LanePath
    footprint: Footprint = field(default_factory=Footprint)

    def __post_init__(self):
        for name in STATE_FIELDS:
            lo, hi = self.initial_state_range[name]
            if hi < lo:
                raise ConfigError(f"initial_state_range.{name}", f"empty interval [{lo}, {hi}]")


@dataclass
class ScenarioConfig:
    agents: list[AgentSpec]
    road: RoadBounds
    name: str = "scenario"
    dt: float = 0.2
    max_steps: int = 100
    desired_speed: float = 5.0
    reward_constants: RewardConstants = field(default_factory=RewardConstants)
    rng_seed: int = 0
    wheelbase: float = 2.7
    action_limits: ActionLimits = field(default_factory=ActionLimits)
    idm: IdmParams = field(default_factory=IdmParams)
    min_initial_gap: float = 0.0
    # observation scaling for the policy network: positions are shifted and
    # divided per axis, speeds divided by speed_scale
    position_center: tuple[float, float] = (50.0, 0.0)
    position_scale: tuple[float, float] = (100.0, 10.0)
    speed_scale: float = 10.0

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigError("dt", "must be > 0")
        if self.max_steps < 1:
            raise ConfigError("max_steps", "must be >= 1")
        n_ego = sum(a.behavior is Behavior.EXTERNAL_EGO for a in self.agents)
        if n_ego != 1 or self.agents[0].behavior is not Behavior.EXTERNAL_EGO:
            raise ConfigError("agents", "exactly one ExternalEgo agent is required and it must come first")

    @property
    def n_vehicles(self) -> int:
        return len(self.agents)

    @property
    def obs_dim(self) -> int:
        return 4 * len(self.agents)

    @property
    def ego(self) -> AgentSpec:
        return self.agents[0]


def lane_change_centerline(y_from: float, y_to: float, x_start: float, x_end: float,
                           x_min: float, x_max: float, resolution: float = 1.0) -> np.ndarray:
    """Straight lane that shifts laterally with a half-cosine profile between x_start and x_end."""
    n = max(int(math.ceil((x_end - x_start) / resolution)), 1)
    xs = np.linspace(x_start, x_end, n + 1)
    ys = y_from + (y_to - y_from) * 0.5 * (1.0 - np.cos(math.pi * (xs - x_start) / (x_end - x_start)))
    pts = [(x_min, y_from)] + list(zip(xs, ys)) + [(x_max, y_to)]
    return np.array(pts)


def _interval(raw, key: str) -> tuple[float, float]:
    if isinstance(raw, (int, float)):
        return float(raw), float(raw)
    try:
        lo, hi = raw
        return float(lo), float(hi)
    except (TypeError, ValueError):
        raise ConfigError(key, f"expected number or [lo, hi], got {raw!r}") from None


def _parse_path(raw: dict, key: str) -> LanePath:
    if not isinstance(raw, dict):
        raise ConfigError(key, "expected a mapping")
    width = float(raw.get("width", 3.5))
    try:
        if "centerline" in raw:
            return LanePath(raw["centerline"], width)
        if "lane_change" in raw:
            return LanePath(lane_change_centerline(**raw["lane_change"]), width)
    except (TypeError, ValueError) as exc:
        raise ConfigError(key, str(exc)) from None
    raise ConfigError(key, "needs 'centerline' or 'lane_change'")


def _parse_agent(raw: dict, i: int) -> AgentSpec:
    key = f"agents[{i}]"
    try:
        behavior = Behavior(raw["behavior"])
    except KeyError:
        raise ConfigError(f"{key}.behavior", "missing") from None
    except ValueError:
        choices = ", ".join(b.value for b in Behavior)
        raise ConfigError(f"{key}.behavior", f"unknown behavior {raw['behavior']!r} (one of {choices})") from None
    rng_raw = raw.get("initial_state_range")
    if not isinstance(rng_raw, dict):
        raise ConfigError(f"{key}.initial_state_range", "missing or not a mapping")
    ranges = {}
    for name in STATE_FIELDS:
        if name not in rng_raw:
            raise ConfigError(f"{key}.initial_state_range.{name}", "missing")
        ranges[name] = _interval(rng_raw[name], f"{key}.initial_state_range.{name}")
    if "reference_path" not in raw:
        raise ConfigError(f"{key}.reference_path", "missing")
    path = _parse_path(raw["reference_path"], f"{key}.reference_path")
    fp_raw = raw.get("footprint", {})
    try:
        fp = Footprint(float(fp_raw.get("length", 4.0)), float(fp_raw.get("width", 1.8)))
    except ValueError as exc:
        raise ConfigError(f"{key}.footprint", str(exc)) from None
    try:
        return AgentSpec(behavior, ranges, path, fp)
    except ConfigError as exc:
        raise ConfigError(f"{key}.{exc.field}", str(exc).split(": ", 1)[1]) from None


def _sub(cls, raw, key):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(key, "expected a mapping")
    try:
        return cls(**{k: float(v) for k, v in raw.items()})
    except TypeError as exc:
        raise ConfigError(key, str(exc)) from None


def scenario_from_dict(raw: dict) -> ScenarioConfig:
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "expected a mapping")
    agents_raw = raw.get("agents")
    if not agents_raw:
        raise ConfigError("agents", "missing or empty")
    agents = [_parse_agent(a, i) for i, a in enumerate(agents_raw)]
    road_raw = raw.get("road")
    if not isinstance(road_raw, dict) or "lower" not in road_raw or "upper" not in road_raw:
        raise ConfigError("road", "needs 'lower' and 'upper' edge polylines")
    try:
        road = RoadBounds(tuple(map(tuple, road_raw["lower"])), tuple(map(tuple, road_raw["upper"])))
    except ValueError as exc:
        raise ConfigError("road", str(exc)) from None
    kwargs = {}
    for name, cast in (("name", str), ("dt", float), ("max_steps", int), ("desired_speed", float),
                       ("rng_seed", int), ("wheelbase", float), ("min_initial_gap", float),
                       ("speed_scale", float)):
        if name in raw:
            try:
                kwargs[name] = cast(raw[name])
            except (TypeError, ValueError):
                raise ConfigError(name, f"cannot convert {raw[name]!r}") from None
    for name in ("position_center", "position_scale"):
        if name in raw:
            kwargs[name] = _interval(raw[name], name)
    kwargs["reward_constants"] = _sub(RewardConstants, raw.get("reward_constants"), "reward_constants")
    kwargs["action_limits"] = _sub(ActionLimits, raw.get("action_limits"), "action_limits")
    kwargs["idm"] = _sub(IdmParams, raw.get("idm"), "idm")
    return ScenarioConfig(agents=agents, road=road, **kwargs)


BUNDLED = ("two_lane_3v", "two_lane_4v", "highway_5v")


def load_scenario(source: str | Path) -> ScenarioConfig:
    """Load a scenario from a YAML file path or a bundled scenario name."""
    source = str(source)
    if source in BUNDLED:
        text = resources.files("lanemerge.scenarios").joinpath(f"{source}.yaml").read_text()
    else:
        path = Path(source)
        if not path.exists():
            raise ConfigError("scenario", f"no such file or bundled scenario: {source}")
        text = path.read_text()
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("scenario", f"YAML parse error: {exc}") from None
    return scenario_from_dict(raw)
