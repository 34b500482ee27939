"""Soft actor-critic: twin soft-Q critics, squashed-Gaussian actor, entropy temperature."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from ..neural import AdamState, MlpParams, adam_step, backward_cached, forward, forward_cached, init_mlp
from .buffer import ReplayBuffer
from .policy import (
    LOG_STD_MAX,
    LOG_STD_MIN,
    PolicyNet,
    policy_outputs,
    split_head,
    squashed_log_prob,
)


@dataclass
class SacConfig:
    gamma: float = 0.99
    tau: float = 0.005
    alpha: float = 0.2
    auto_alpha: bool = True
    target_entropy: float | None = None
    batch_size: int = 256
    buffer_size: int = 1_000_000
    warmup_steps: int = 1000
    update_every: int = 1
    actor_lr: float = 3e-4
    critic_lr: float = 3e-4
    alpha_lr: float = 3e-4
    actor_hidden: tuple[int, ...] = (512, 512, 128)
    critic_hidden: tuple[int, ...] = (256, 256, 128)
    twin_critics: bool = True
    reward_scale: float = 1.0
    dtype: str = "float64"
    # bookkeeping for train(): all counted in episodes
    eval_every: int = 0
    eval_episodes: int = 20
    checkpoint_every: int = 50
    curve_window: int = 20

    def __post_init__(self):
        self.actor_hidden = tuple(int(h) for h in self.actor_hidden)
        self.critic_hidden = tuple(int(h) for h in self.critic_hidden)
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.update_every < 1:
            raise ValueError("update_every must be >= 1")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    @classmethod
    def from_dict(cls, raw: dict) -> "SacConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown SAC config keys: {', '.join(sorted(unknown))}")
        defaults = cls()
        typed = {}
        for key, value in raw.items():
            default = getattr(defaults, key)
            try:
                if key == "target_entropy":
                    typed[key] = None if value is None else float(value)
                elif isinstance(default, bool):
                    if not isinstance(value, bool):
                        raise TypeError
                    typed[key] = value
                elif isinstance(default, tuple):
                    typed[key] = tuple(int(h) for h in value)
                else:
                    typed[key] = type(default)(value)
            except (TypeError, ValueError):
                raise ValueError(f"{key}: expected {type(default).__name__}, got {value!r}") from None
        return cls(**typed)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["actor_hidden"] = list(self.actor_hidden)
        d["critic_hidden"] = list(self.critic_hidden)
        return d


@dataclass
class SacAgent:
    policy: PolicyNet
    critics: list[MlpParams]
    targets: list[MlpParams]
    cfg: SacConfig
    actor_opt: AdamState = field(init=False)
    critic_opts: list[AdamState] = field(init=False)
    log_alpha: np.ndarray = field(init=False)
    alpha_opt: AdamState = field(init=False)
    n_updates: int = 0

    def __post_init__(self):
        c = self.cfg
        self.actor_opt = AdamState.for_params(self.policy.params.flat, lr=c.actor_lr)
        self.critic_opts = [AdamState.for_params(q.flat, lr=c.critic_lr) for q in self.critics]
        self.log_alpha = np.array([math.log(c.alpha)])
        self.alpha_opt = AdamState.for_params(self.log_alpha, lr=c.alpha_lr)

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha[0]))

    @property
    def target_entropy(self) -> float:
        if self.cfg.target_entropy is not None:
            return float(self.cfg.target_entropy)
        return -float(self.policy.action_dim)

    @classmethod
    def create(cls, policy: PolicyNet, cfg: SacConfig, rng: np.random.Generator) -> "SacAgent":
        dtype = np.dtype(cfg.dtype)
        sizes = (policy.obs_dim + policy.action_dim, *cfg.critic_hidden, 1)
        n_critics = 2 if cfg.twin_critics else 1
        critics = [init_mlp(sizes, rng, dtype) for _ in range(n_critics)]
        return cls(policy, critics, [q.copy() for q in critics], cfg)


def _q_input(obs: np.ndarray, act: np.ndarray) -> np.ndarray:
    return np.concatenate([obs, act], axis=-1)


def critic_target(batch: dict, agent: SacAgent, cfg: SacConfig, rng: np.random.Generator) -> np.ndarray:
    """Soft Bellman target r + gamma (1 - done) (min_i Q'_i(s', a') - alpha log pi(a'|s'))."""
    pol = agent.policy
    out = forward(pol.params, batch["next_obs"])
    mean, log_std, _ = split_head(out, pol.action_dim)
    eps = rng.standard_normal(mean.shape).astype(mean.dtype)
    u = mean + np.exp(log_std) * eps
    logp = squashed_log_prob(eps, log_std, u, pol.half)
    q_in = _q_input(batch["next_obs"], np.tanh(u))
    q_next = np.min([forward(t, q_in)[:, 0] for t in agent.targets], axis=0)
    soft_value = q_next - agent.alpha * logp
    return cfg.reward_scale * batch["rew"] + cfg.gamma * (1.0 - batch["done"]) * soft_value


def polyak_update(targets: list[MlpParams], online: list[MlpParams], tau: float) -> None:
    for t, q in zip(targets, online):
        t.flat *= 1.0 - tau
        t.flat += tau * q.flat


def _finite_or_raise(name: str, value: float, agent: SacAgent) -> None:
    if not math.isfinite(value):
        raise FloatingPointError(
            f"non-finite {name} at update {agent.n_updates} (alpha={agent.alpha:.3g}); training halted")


def update(agent: SacAgent, buffer: ReplayBuffer, cfg: SacConfig, rng: np.random.Generator) -> dict:
    """One gradient step on the critics, the actor and (optionally) the temperature."""
    if len(buffer) < cfg.batch_size:
        raise ValueError(f"buffer holds {len(buffer)} transitions, need at least {cfg.batch_size}")
    batch = buffer.sample(cfg.batch_size)
    n = cfg.batch_size
    obs, act = batch["obs"], batch["act"]
    y = critic_target(batch, agent, cfg, rng)

    # critics: 0.5 * mean squared error to the frozen target
    q_in = _q_input(obs, act)
    passes = []
    for q in agent.critics:
        out, acts = forward_cached(q, q_in)
        passes.append((out[:, 0] - y, acts))
    critic_loss = sum(float(np.mean(err * err)) for err, _ in passes)
    _finite_or_raise("critic loss", critic_loss, agent)
    for q, opt, (err, acts) in zip(agent.critics, agent.critic_opts, passes):
        grad, _ = backward_cached(q, acts, (err / n)[:, None])
        adam_step(q.flat, grad, opt)

    # actor: minimize alpha log pi - min_i Q_i via the reparameterized sample
    pol = agent.policy
    dim = pol.action_dim
    mean, log_std, raw_log_std, actor_acts = policy_outputs(pol, obs)
    std = np.exp(log_std)
    eps = rng.standard_normal(mean.shape).astype(mean.dtype)
    u = mean + std * eps
    t = np.tanh(u)
    logp = squashed_log_prob(eps, log_std, u, pol.half)
    q_in = _q_input(obs, t)
    caches = [forward_cached(q, q_in) for q in agent.critics]
    qs = np.stack([c[0][:, 0] for c in caches])
    pick = np.argmin(qs, axis=0)
    q_min = qs[pick, np.arange(n)]
    dq_dt = np.zeros_like(t)
    for i, (q, (_, acts)) in enumerate(zip(agent.critics, caches)):
        mask = (pick == i).astype(t.dtype)
        if mask.any():
            _, g_in = backward_cached(q, acts, mask[:, None], need_param_grad=False)
            dq_dt += g_in[:, -dim:]
    alpha = agent.alpha
    actor_loss = float(np.mean(alpha * logp - q_min))
    _finite_or_raise("actor loss", actor_loss, agent)
    dt_du = 1.0 - t * t
    d_mean = (2.0 * alpha * t - dq_dt * dt_du) / n
    d_log_std = (alpha * (-1.0 + 2.0 * t * std * eps) - dq_dt * dt_du * std * eps) / n
    d_log_std *= (raw_log_std > LOG_STD_MIN) & (raw_log_std < LOG_STD_MAX)
    grad, _ = backward_cached(pol.params, actor_acts, np.concatenate([d_mean, d_log_std], axis=1))
    adam_step(pol.params.flat, grad, agent.actor_opt)

    entropy = -float(np.mean(logp))
    if cfg.auto_alpha:
        g_alpha = np.array([-(float(np.mean(logp)) + agent.target_entropy)])
        adam_step(agent.log_alpha, g_alpha, agent.alpha_opt)

    polyak_update(agent.targets, agent.critics, cfg.tau)
    agent.n_updates += 1
    return {"critic_loss": critic_loss, "actor_loss": actor_loss, "alpha": agent.alpha,
            "entropy": entropy}
