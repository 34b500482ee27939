"""Deterministic lane-merge simulator."""

from .collision import check_collision, footprint_corners
from .config import (
    AgentSpec,
    ConfigError,
    ScenarioConfig,
    load_scenario,
    scenario_from_dict,
)
from .dynamics import (
    idm_acceleration,
    step_constant_velocity,
    step_idm,
    step_single_track,
    step_single_track_batch,
)
from .geometry import LanePath, RoadBounds
from .types import (
    Action,
    ActionLimits,
    Behavior,
    EpisodeRecord,
    Footprint,
    IdmParams,
    RewardConstants,
    StepOutcome,
    VehicleState,
    normalize_angle,
)
from .world import (
    EpisodeDone,
    World,
    compute_reward,
    observe,
    read_episode_csv,
    reset,
    step_world,
    write_episode_csv,
)
