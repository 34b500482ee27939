"""Episodic multi-agent world: reset, observation, reward and stepping."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .collision import check_collision, footprint_corners
from .config import STATE_FIELDS, ScenarioConfig
from .dynamics import step_constant_velocity, step_idm, step_single_track
from .geometry import LanePath
from .types import Action, Behavior, EpisodeRecord, Footprint, StepOutcome, VehicleState

MAX_RESET_ATTEMPTS = 100


class EpisodeDone(RuntimeError):
    pass


@dataclass
class World:
    config: ScenarioConfig
    states: list[VehicleState]
    seed: int
    step_count: int = 0
    done: bool = False
    collided: bool = False
    last_action: Action | None = None
    record: EpisodeRecord = field(default_factory=EpisodeRecord)

    @property
    def ego(self) -> VehicleState:
        return self.states[0]

    @property
    def others(self) -> list[VehicleState]:
        return self.states[1:]


def _sample_states(config: ScenarioConfig, rng: np.random.Generator) -> list[VehicleState]:
    states = []
    for spec in config.agents:
        vals = []
        for name in STATE_FIELDS:
            lo, hi = spec.initial_state_range[name]
            vals.append(float(rng.uniform(lo, hi)))
        states.append(VehicleState(*vals))
    return states


def _initial_overlap(config: ScenarioConfig, states: list[VehicleState]) -> bool:
    gap = config.min_initial_gap
    fps = [Footprint(a.footprint.length + gap, a.footprint.width) for a in config.agents]
    for i in range(len(states)):
        for j in range(i + 1, len(states)):
            if check_collision(states[i], fps[i], states[j], fps[j]):
                return True
    return False


def reset(config: ScenarioConfig, seed: int | None = None) -> World:
    """Sample a fresh world; initial states are uniform over each agent's ranges.

    Worlds with overlapping footprints are redrawn; after
    ``MAX_RESET_ATTEMPTS`` failed draws a RuntimeError is raised.
    """
    seed = config.rng_seed if seed is None else seed
    rng = np.random.default_rng(seed)
    for _ in range(MAX_RESET_ATTEMPTS):
        states = _sample_states(config, rng)
        if not _initial_overlap(config, states):
            break
    else:
        raise RuntimeError(f"could not sample a collision-free initial world in {MAX_RESET_ATTEMPTS} attempts")
    n_others = len(states) - 1
    record = EpisodeRecord(ego_states=[states[0]], other_histories=[[s] for s in states[1:]])
    assert len(record.other_histories) == n_others
    return World(config=config, states=states, seed=seed, record=record)


def observe(world: World) -> np.ndarray:
    """Concatenated (x, y, v cos(theta), v sin(theta)) for every vehicle, ego first."""
    obs = np.empty(4 * len(world.states))
    for i, s in enumerate(world.states):
        obs[4 * i:4 * i + 4] = (s.x, s.y, s.v * math.cos(s.theta), s.v * math.sin(s.theta))
    return obs


def _lateral_accel(v: float, delta: float, wheelbase: float) -> float:
    return v * v * math.tan(delta) / wheelbase


def compute_reward(ego_before: VehicleState, prev_action: Action | None, action: Action,
                   ego_after: VehicleState, reference: LanePath, collided: bool,
                   config: ScenarioConfig) -> float:
    """Sum of reference, comfort, velocity and collision terms for one step.

    Tracking terms have the form ``r_max - deviation**2``. Jerk is the
    finite-difference change of longitudinal and lateral acceleration; there
    is no jerk on the first step of an episode.
    """
    rc = config.reward_constants
    r_vel = rc.r_max_vel - (ego_after.v - config.desired_speed) ** 2
    r_ref = rc.r_max_ref - reference.distance(ego_after.x, ego_after.y) ** 2
    r_comfort = 0.0
    if prev_action is not None:
        dt = config.dt
        j_lon = (action.a - prev_action.a) / dt
        j_lat = (_lateral_accel(ego_after.v, action.delta, config.wheelbase)
                 - _lateral_accel(ego_before.v, prev_action.delta, config.wheelbase)) / dt
        r_comfort = rc.r_jerk * (j_lon * j_lon + j_lat * j_lat)
    r_col = rc.r_col if collided else 0.0
    return r_ref + r_comfort + r_vel + r_col


def ego_off_road(world: World, state: VehicleState | None = None) -> bool:
    state = world.ego if state is None else state
    return not world.config.road.contains(footprint_corners(state, world.config.ego.footprint))


def ego_collides(world: World, states: list[VehicleState]) -> bool:
    cfg = world.config
    ego, ego_fp = states[0], cfg.agents[0].footprint
    for spec, other in zip(cfg.agents[1:], states[1:]):
        if check_collision(ego, ego_fp, other, spec.footprint):
            return True
    return ego_off_road(world, ego)


def _occupies(path: LanePath, state: VehicleState, fp: Footprint) -> tuple[bool, float]:
    arc, lateral = path.project(state.x, state.y)
    return abs(lateral) < 0.5 * (path.width + fp.width), arc


def find_leader(world: World, i: int) -> tuple[VehicleState | None, float]:
    """Nearest vehicle ahead of agent ``i`` along its path (the ego included).

    Returns the leader state and the gap offset (half lengths of both vehicles).
    """
    cfg = world.config
    spec = cfg.agents[i]
    path = spec.reference_path
    s_self, _ = path.project(world.states[i].x, world.states[i].y)
    best, best_arc, best_len = None, math.inf, 0.0
    for j, (other_spec, other) in enumerate(zip(cfg.agents, world.states)):
        if j == i:
            continue
        inside, arc = _occupies(path, other, other_spec.footprint)
        if inside and s_self < arc < best_arc:
            best, best_arc, best_len = other, arc, other_spec.footprint.length
    return best, 0.5 * (spec.footprint.length + best_len)


def step_world(world: World, ego_action: Action) -> StepOutcome:
    """Advance every agent by one step and score the ego's action."""
    if world.done:
        raise EpisodeDone("step_world called on a finished episode; call reset()")
    cfg = world.config
    ego_action = cfg.action_limits.clip(ego_action)
    ego_before = world.ego
    new_states = [step_single_track(ego_before, ego_action, cfg.dt, cfg.wheelbase)]
    for i in range(1, len(world.states)):
        spec, s = cfg.agents[i], world.states[i]
        if spec.behavior is Behavior.CONSTANT_VELOCITY:
            new_states.append(step_constant_velocity(s, spec.reference_path, cfg.dt))
        else:
            leader, offset = find_leader(world, i)
            if leader is not None:
                arc_self, _ = spec.reference_path.project(s.x, s.y)
                arc_lead, _ = spec.reference_path.project(leader.x, leader.y)
                if arc_lead - arc_self - offset <= 0.0:
                    world.record.hard_brakes += 1
            new_states.append(step_idm(s, leader, cfg.idm, spec.reference_path, cfg.dt, offset))

    collided = ego_collides(world, new_states)
    reward = compute_reward(ego_before, world.last_action, ego_action, new_states[0],
                            cfg.ego.reference_path, collided, cfg)
    world.states = new_states
    world.step_count += 1
    world.last_action = ego_action
    world.collided = collided
    world.done = collided or world.step_count >= cfg.max_steps

    rec = world.record
    rec.ego_states.append(new_states[0])
    rec.ego_actions.append(ego_action)
    for hist, s in zip(rec.other_histories, new_states[1:]):
        hist.append(s)
    rec.rewards.append(reward)
    rec.collided = collided
    rec.success = world.done and not collided
    return StepOutcome(observe(world), reward, collided, world.done)


CSV_HEADER = ("t", "agent_id", "x", "y", "theta", "v", "delta", "a", "reward", "collided")


def episode_rows(record: EpisodeRecord, dt: float):
    """Rows of the per-agent, per-step CSV export."""
    n = len(record.ego_states)
    for k in range(n):
        t = round(k * dt, 10)
        s = record.ego_states[k]
        has_action = k < len(record.ego_actions)
        u = record.ego_actions[k] if has_action else None
        collided = int(record.collided and k == n - 1)
        yield (t, 0, s.x, s.y, s.theta, s.v,
               u.delta if u else "", u.a if u else "",
               record.rewards[k] if has_action else "", collided)
        for j, hist in enumerate(record.other_histories, start=1):
            o = hist[k]
            yield (t, j, o.x, o.y, o.theta, o.v, "", "", "", 0)


def write_episode_csv(record: EpisodeRecord, dt: float, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for row in episode_rows(record, dt):
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])


def read_episode_csv(path: str | Path) -> EpisodeRecord:
    """Inverse of :func:`write_episode_csv` (reward/flags for the ego only)."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or tuple(rows[0].keys()) != CSV_HEADER:
        raise ValueError(f"{path}: expected header {','.join(CSV_HEADER)}")
    rec = EpisodeRecord()
    others: dict[int, list[VehicleState]] = {}
    for row in rows:
        aid = int(row["agent_id"])
        state = VehicleState(float(row["x"]), float(row["y"]), float(row["theta"]), float(row["v"]))
        if aid == 0:
            rec.ego_states.append(state)
            if row["delta"] != "":
                rec.ego_actions.append(Action(float(row["delta"]), float(row["a"])))
                rec.rewards.append(float(row["reward"]))
            if row["collided"] == "1":
                rec.collided = True
        else:
            others.setdefault(aid, []).append(state)
    rec.other_histories = [others[k] for k in sorted(others)]
    rec.success = not rec.collided
    return rec
