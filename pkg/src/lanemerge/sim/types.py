"""Core value types shared by the simulator, the optimizer and the RL agent."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np


def normalize_angle(theta: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    wrapped = math.remainder(theta, 2.0 * math.pi)
    if wrapped == -math.pi:
        return math.pi
    return wrapped


@dataclass(frozen=True)
class VehicleState:
    x: float
    y: float
    theta: float
    v: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta, self.v])

    @classmethod
    def from_array(cls, arr) -> "VehicleState":
        return cls(float(arr[0]), float(arr[1]), float(arr[2]), float(arr[3]))


@dataclass(frozen=True)
class Action:
    delta: float
    a: float

    def as_array(self) -> np.ndarray:
        return np.array([self.delta, self.a])


@dataclass(frozen=True)
class ActionLimits:
    delta_min: float = -0.2
    delta_max: float = 0.2
    a_min: float = -1.0
    a_max: float = 1.0

    @property
    def low(self) -> np.ndarray:
        return np.array([self.delta_min, self.a_min])

    @property
    def high(self) -> np.ndarray:
        return np.array([self.delta_max, self.a_max])

    def clip(self, action: Action) -> Action:
        return Action(
            min(max(action.delta, self.delta_min), self.delta_max),
            min(max(action.a, self.a_min), self.a_max),
        )

    def contains(self, action: Action) -> bool:
        return (self.delta_min <= action.delta <= self.delta_max
                and self.a_min <= action.a <= self.a_max)


@dataclass(frozen=True)
class Footprint:
    length: float = 4.0
    width: float = 1.8

    def __post_init__(self):
        if self.length <= 0 or self.width <= 0:
            raise ValueError(f"footprint dimensions must be positive, got {self}")


class Behavior(str, Enum):
    EXTERNAL_EGO = "ExternalEgo"
    CONSTANT_VELOCITY = "ConstantVelocity"
    IDM = "IDM"


@dataclass(frozen=True)
class IdmParams:
    v0: float = 5.0
    time_headway: float = 1.5
    s0: float = 2.0
    a_max: float = 1.0
    b: float = 1.5
    b_max: float = 8.0
    exponent: float = 4.0


@dataclass(frozen=True)
class RewardConstants:
    r_max_vel: float = 10.0
    r_max_ref: float = 10.0
    r_col: float = -100.0
    r_jerk: float = -0.1


@dataclass
class StepOutcome:
    observation: np.ndarray
    reward: float
    collided: bool
    done: bool


@dataclass
class EpisodeRecord:
    ego_states: list[VehicleState] = field(default_factory=list)
    ego_actions: list[Action] = field(default_factory=list)
    other_histories: list[list[VehicleState]] = field(default_factory=list)
    rewards: list[float] = field(default_factory=list)
    success: bool = False
    collided: bool = False
    hard_brakes: int = 0

    @property
    def n_steps(self) -> int:
        return len(self.ego_actions)

    @property
    def total_reward(self) -> float:
        return float(sum(self.rewards))

    def ego_array(self) -> np.ndarray:
        return np.array([s.as_array() for s in self.ego_states])

    def action_array(self) -> np.ndarray:
        return np.array([u.as_array() for u in self.ego_actions]).reshape(-1, 2)

    def other_arrays(self) -> list[np.ndarray]:
        return [np.array([s.as_array() for s in hist]) for hist in self.other_histories]
