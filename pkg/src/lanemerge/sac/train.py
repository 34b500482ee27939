"""Episode loop tying the simulator to the SAC agent."""

from __future__ import annotations

import csv
import logging
from collections import deque
from pathlib import Path
from typing import Callable

import numpy as np

from ..neural import save_params
from ..sim import Action, ScenarioConfig, World, observe, reset, step_world
from .agent import SacAgent, SacConfig, update
from .buffer import ReplayBuffer
from .policy import PolicyNet, greedy_action, make_policy, sample_action

log = logging.getLogger(__name__)

CURVE_HEADER = ("episode", "avg_reward")


def greedy_episode(policy: PolicyNet, scenario: ScenarioConfig, seed: int) -> World:
    """Run one episode with the deterministic policy; returns the finished world."""
    if policy.obs_dim != scenario.obs_dim:
        raise ValueError(
            f"policy expects {policy.obs_dim} observation entries, scenario '{scenario.name}' "
            f"provides {scenario.obs_dim}")
    world = reset(scenario, seed)
    obs = observe(world)
    while not world.done:
        delta, a = greedy_action(policy, obs)
        obs = step_world(world, Action(float(delta), float(a))).observation
    return world


def evaluate(policy: PolicyNet, scenario: ScenarioConfig, seeds) -> tuple[float, float]:
    """(success rate in percent, mean episode reward) over greedy episodes."""
    seeds = list(seeds)
    if not seeds:
        raise ValueError("need at least one evaluation seed")
    worlds = [greedy_episode(policy, scenario, s) for s in seeds]
    success = 100.0 * np.mean([w.record.success for w in worlds])
    return float(success), float(np.mean([w.record.total_reward for w in worlds]))


def write_curve(curve: list[tuple[int, float]], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CURVE_HEADER)
        for ep, avg in curve:
            w.writerow([ep, repr(float(avg))])


def train(scenario: ScenarioConfig, cfg: SacConfig, episodes: int, seed: int,
          out_dir: str | Path | None = None,
          progress: Callable[[int, float, dict], None] | None = None,
          eval_seeds=None):
    """Train a policy from scratch.

    Returns ``(policy, curve)`` where ``curve`` lists ``(episode, avg_reward)``
    with the reward averaged over the last ``cfg.curve_window`` episodes. When
    ``out_dir`` is given, ``actor.ckpt`` (latest), ``actor_best.ckpt`` (best
    periodic evaluation, if enabled) and ``curve.csv`` are written there.
    """
    if episodes < 0:
        raise ValueError("episodes must be >= 0")
    dtype = np.dtype(cfg.dtype)
    seq = np.random.SeedSequence(seed)
    net_rng, act_rng, buf_rng, upd_rng, ep_rng = (np.random.default_rng(s) for s in seq.spawn(5))

    policy = make_policy(scenario, cfg.actor_hidden, net_rng, dtype)
    agent = SacAgent.create(policy, cfg, net_rng)
    capacity = min(cfg.buffer_size, max(episodes, 1) * scenario.max_steps)
    buffer = ReplayBuffer(capacity, policy.obs_dim, policy.action_dim, buf_rng, dtype)

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    if eval_seeds is None:
        eval_seeds = range(10_000_000, 10_000_000 + cfg.eval_episodes)

    curve: list[tuple[int, float]] = []
    window: deque[float] = deque(maxlen=cfg.curve_window)
    best_eval = -np.inf
    total_steps = 0
    report: dict = {}
    for ep in range(episodes):
        world = reset(scenario, int(ep_rng.integers(2**31)))
        x = policy.normalize(observe(world))
        while not world.done:
            if total_steps < cfg.warmup_steps:
                t = act_rng.uniform(-1.0, 1.0, policy.action_dim)
            else:
                _, u, _ = sample_action(policy, x, act_rng, normalized=True)
                t = np.tanh(u)
            delta, a = policy.scale_action(t)
            step = step_world(world, Action(float(delta), float(a)))
            x_next = policy.normalize(step.observation)
            # hitting the step limit is a truncation, not a terminal state
            buffer.push(x, t, step.reward, x_next, step.collided)
            x = x_next
            total_steps += 1
            if (total_steps >= cfg.warmup_steps and len(buffer) >= cfg.batch_size
                    and total_steps % cfg.update_every == 0):
                report = update(agent, buffer, cfg, upd_rng)
        window.append(world.record.total_reward)
        curve.append((ep + 1, float(np.mean(window))))
        if progress is not None:
            progress(ep + 1, curve[-1][1], dict(report, success=world.record.success))

        if out is not None and cfg.checkpoint_every and (ep + 1) % cfg.checkpoint_every == 0:
            save_params(policy.params, out / "actor.ckpt")
            write_curve(curve, out / "curve.csv")
        if cfg.eval_every and (ep + 1) % cfg.eval_every == 0:
            rate, avg = evaluate(policy, scenario, eval_seeds)
            log.info("episode %d: eval success %.1f%%, reward %.1f", ep + 1, rate, avg)
            score = rate * 1e4 + avg
            if score > best_eval and out is not None:
                best_eval = score
                save_params(policy.params, out / "actor_best.ckpt")

    if out is not None:
        save_params(policy.params, out / "actor.ckpt")
        write_curve(curve, out / "curve.csv")
    return policy, curve
