"""Soft actor-critic policy learning."""

from .agent import SacAgent, SacConfig, critic_target, polyak_update, update
from .buffer import ReplayBuffer
from .policy import (
    LOG_STD_MAX,
    LOG_STD_MIN,
    PolicyNet,
    greedy_action,
    load_policy,
    make_policy,
    policy_for_scenario,
    sample_action,
    squash,
)
from .train import evaluate, greedy_episode, train, write_curve
