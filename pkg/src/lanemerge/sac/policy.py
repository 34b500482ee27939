"""Squashed-Gaussian policy over bounded continuous actions."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..neural import MlpParams, forward, forward_cached, init_mlp, load_params
from ..sim.config import ScenarioConfig

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
_LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class PolicyNet:
    """Actor network plus the affine maps around it.

    The network sees ``(obs - obs_center) / obs_scale`` and emits
    (means, log_stds) for the pre-squash variable ``u``; actions are
    ``mid + half * tanh(u)`` with ``mid``/``half`` from the action limits.
    """

    params: MlpParams
    low: np.ndarray
    high: np.ndarray
    obs_center: np.ndarray
    obs_scale: np.ndarray

    def __post_init__(self):
        self.low = np.asarray(self.low, dtype=float)
        self.high = np.asarray(self.high, dtype=float)
        if self.params.layer_sizes[-1] != 2 * self.low.size:
            raise ValueError("actor output must hold a mean and a log-std per action dimension")
        if self.params.layer_sizes[0] != self.obs_center.size:
            raise ValueError(
                f"actor input width {self.params.layer_sizes[0]} does not match observation size {self.obs_center.size}")

    @property
    def obs_dim(self) -> int:
        return self.params.layer_sizes[0]

    @property
    def action_dim(self) -> int:
        return self.low.size

    @property
    def mid(self) -> np.ndarray:
        return 0.5 * (self.high + self.low)

    @property
    def half(self) -> np.ndarray:
        return 0.5 * (self.high - self.low)

    def normalize(self, obs: np.ndarray) -> np.ndarray:
        obs = np.asarray(obs, dtype=float)
        if obs.shape[-1] != self.obs_dim:
            raise ValueError(f"observation has {obs.shape[-1]} entries, policy expects {self.obs_dim}")
        return (obs - self.obs_center) / self.obs_scale

    def scale_action(self, squashed: np.ndarray) -> np.ndarray:
        """Map tanh output in [-1, 1] to the action box (clipped against rounding at the ends)."""
        return np.clip(self.mid + self.half * squashed, self.low, self.high)


def split_head(out: np.ndarray, action_dim: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Split network output into (mean, clamped log-std, raw log-std)."""
    mean = out[..., :action_dim]
    raw = out[..., action_dim:]
    return mean, np.clip(raw, LOG_STD_MIN, LOG_STD_MAX), raw


def log1m_tanh2(u: np.ndarray) -> np.ndarray:
    """log(1 - tanh(u)^2) without cancellation for large |u|."""
    u = np.abs(u)
    return 2.0 * (math.log(2.0) - u - np.log1p(np.exp(-2.0 * u)))


def squashed_log_prob(eps: np.ndarray, log_std: np.ndarray, u: np.ndarray, half: np.ndarray) -> np.ndarray:
    """Log-density of the scaled action for u = mean + std * eps (summed over the last axis)."""
    gauss = -0.5 * eps * eps - log_std - 0.5 * _LOG_2PI
    return np.sum(gauss - np.log(half) - log1m_tanh2(u), axis=-1)


def squash(u: np.ndarray, low: np.ndarray, high: np.ndarray) -> np.ndarray:
    """mid + half * tanh(u): monotone map from the real line onto (low, high)."""
    return np.clip(0.5 * (high + low) + 0.5 * (high - low) * np.tanh(u), low, high)


def sample_action(policy: PolicyNet, obs: np.ndarray, rng: np.random.Generator,
                  normalized: bool = False):
    """Draw an action from the policy.

    Returns ``(action, u, log_prob)``; ``u`` is the pre-squash sample and
    ``log_prob`` the density of ``action`` in action space (tanh and scaling
    Jacobians included). Works on a single observation or a batch.
    """
    x = obs if normalized else policy.normalize(obs)
    out = forward(policy.params, x)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("policy network produced non-finite output")
    mean, log_std, _ = split_head(out, policy.action_dim)
    eps = rng.standard_normal(mean.shape)
    u = mean + np.exp(log_std) * eps
    log_prob = squashed_log_prob(eps, log_std, u, policy.half)
    return policy.scale_action(np.tanh(u)), u, log_prob


def greedy_action(policy: PolicyNet, obs: np.ndarray, normalized: bool = False) -> np.ndarray:
    """Deterministic action: the squashed mean of the Gaussian head."""
    x = obs if normalized else policy.normalize(obs)
    out = forward(policy.params, x)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("policy network produced non-finite output")
    mean = out[..., :policy.action_dim]
    return policy.scale_action(np.tanh(mean))


def policy_outputs(policy: PolicyNet, x_norm: np.ndarray):
    """Cached forward pass for training: (mean, log_std, raw_log_std, acts)."""
    out, acts = forward_cached(policy.params, x_norm)
    mean, log_std, raw = split_head(out, policy.action_dim)
    return mean, log_std, raw, acts


def observation_scales(scenario: ScenarioConfig) -> tuple[np.ndarray, np.ndarray]:
    """Per-entry (center, scale) for the concatenated (x, y, vx, vy) observation."""
    cx, cy = scenario.position_center
    sx, sy = scenario.position_scale
    vs = scenario.speed_scale
    center = np.tile([cx, cy, 0.0, 0.0], scenario.n_vehicles)
    scale = np.tile([sx, sy, vs, vs], scenario.n_vehicles)
    return center, scale


def make_policy(scenario: ScenarioConfig, hidden, rng: np.random.Generator,
                dtype=np.float64) -> PolicyNet:
    lim = scenario.action_limits
    sizes = (scenario.obs_dim, *hidden, 4)
    center, scale = observation_scales(scenario)
    return PolicyNet(init_mlp(sizes, rng, dtype), lim.low, lim.high, center, scale)


def policy_for_scenario(params: MlpParams, scenario: ScenarioConfig) -> PolicyNet:
    """Wrap trained actor parameters for a scenario; checks the observation width."""
    if params.layer_sizes[0] != scenario.obs_dim:
        raise ValueError(
            f"policy expects {params.layer_sizes[0]} observation entries but scenario "
            f"'{scenario.name}' has {scenario.n_vehicles} vehicles ({scenario.obs_dim} entries)")
    lim = scenario.action_limits
    center, scale = observation_scales(scenario)
    return PolicyNet(params, lim.low, lim.high, center, scale)


def load_policy(path, scenario: ScenarioConfig) -> PolicyNet:
    return policy_for_scenario(load_params(path), scenario)
