"""Shared FIFO experience replay with uniform with-replacement sampling."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numcore import ConfigError


@dataclass
class Transition:
    s: np.ndarray
    a: np.ndarray
    r: float
    s_next: np.ndarray
    done: float = 0.0


@dataclass
class Batch:
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    done: np.ndarray

    def __len__(self):
        return len(self.r)

    def transitions(self):
        return [Transition(self.s[i], self.a[i], float(self.r[i]), self.s_next[i], float(self.done[i]))
                for i in range(len(self))]


class EmptyBufferError(RuntimeError):
    pass


class ReplayBuffer:
    """Ring storage; once full the oldest transition is overwritten.

    ``sample`` only reads, so several learners may sample concurrently as
    long as nobody appends at the same time.
    """

    def __init__(self, obs_dim: int, act_dim: int, capacity: int = 1_000_000):
        if capacity < 1:
            raise ConfigError(f"capacity must be >= 1, got {capacity}")
        self.obs_dim, self.act_dim, self.capacity = obs_dim, act_dim, capacity
        self.s = np.zeros((capacity, obs_dim))
        self.a = np.zeros((capacity, act_dim))
        self.r = np.zeros(capacity)
        self.s_next = np.zeros((capacity, obs_dim))
        self.done = np.zeros(capacity)
        self.cursor = 0
        self.size = 0
        self.appends = 0

    def __len__(self):
        return self.size

    def append(self, t: Transition) -> None:
        s, a, s2 = np.asarray(t.s), np.asarray(t.a), np.asarray(t.s_next)
        if s.shape != (self.obs_dim,) or s2.shape != (self.obs_dim,) or a.shape != (self.act_dim,):
            raise ConfigError("transition dimensions do not match the buffer")
        if not np.isfinite(t.r):
            raise ConfigError(f"non-finite reward {t.r}")
        i = self.cursor
        self.s[i], self.a[i], self.r[i], self.s_next[i], self.done[i] = s, a, t.r, s2, t.done
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        self.appends += 1

    def indices(self, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        if self.size == 0:
            raise EmptyBufferError("cannot sample from an empty replay buffer")
        if batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {batch_size}")
        return rng.integers(0, self.size, size=batch_size)

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        idx = self.indices(batch_size, rng)
        return Batch(self.s[idx], self.a[idx], self.r[idx], self.s_next[idx], self.done[idx])

    def sample_states(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.s[self.indices(n, rng)]

    def contents(self) -> list:
        """Stored transitions, oldest first."""
        order = np.arange(self.size) if self.size < self.capacity else \
            (np.arange(self.capacity) + self.cursor) % self.capacity
        return [Transition(self.s[i].copy(), self.a[i].copy(), float(self.r[i]),
                           self.s_next[i].copy(), float(self.done[i])) for i in order]
