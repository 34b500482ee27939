from __future__ import annotations

import numpy as np


class ReplayBuffer:
    """Fixed-capacity ring buffer of (obs, action, reward, next_obs, done) transitions.

    Actions are stored in the policy's normalized (-1, 1) space. Sampling is
    uniform with replacement over the stored transitions.
    """

    def __init__(self, capacity: int, obs_dim: int, act_dim: int, rng: np.random.Generator,
                 dtype=np.float64):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = int(capacity)
        self.rng = rng
        self.obs = np.zeros((self.capacity, obs_dim), dtype=dtype)
        self.act = np.zeros((self.capacity, act_dim), dtype=dtype)
        self.rew = np.zeros(self.capacity, dtype=dtype)
        self.next_obs = np.zeros((self.capacity, obs_dim), dtype=dtype)
        self.done = np.zeros(self.capacity, dtype=dtype)
        self.cursor = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def push(self, obs, act, rew: float, next_obs, done: bool) -> None:
        i = self.cursor
        self.obs[i] = obs
        self.act[i] = act
        self.rew[i] = rew
        self.next_obs[i] = next_obs
        self.done[i] = float(done)
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample_indices(self, batch_size: int) -> np.ndarray:
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        return self.rng.integers(0, self.size, size=batch_size)

    def sample(self, batch_size: int) -> dict[str, np.ndarray]:
        idx = self.sample_indices(batch_size)
        return {"obs": self.obs[idx], "act": self.act[idx], "rew": self.rew[idx],
                "next_obs": self.next_obs[idx], "done": self.done[idx]}
