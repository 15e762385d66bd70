"""Lightweight continuous-control tasks and the delayed-reward wrapper.

Registry ids:

* ``pointmass-dense``  - 2-D double integrator, quadratic distance cost.
* ``pointmass-sparse`` - same dynamics, +1 on reaching the goal, control cost otherwise.
* ``pendulum``         - torque-limited swing-up.
* ``delayed:<id>:<f>`` - any of the above with rewards accumulated and emitted every f steps.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numcore import ConfigError


@dataclass(frozen=True)
class EnvSpec:
    obs_dim: int
    act_dim: int
    low: tuple
    high: tuple
    max_episode_steps: int

    def __post_init__(self):
        if self.obs_dim < 1 or self.act_dim < 1 or self.max_episode_steps < 1:
            raise ConfigError(f"invalid env spec {self}")
        if len(self.low) != self.act_dim or len(self.high) != self.act_dim:
            raise ConfigError("action bounds must have act_dim entries")
        if any(lo >= hi for lo, hi in zip(self.low, self.high)):
            raise ConfigError("action bounds need low < high")

    @property
    def action_low(self) -> np.ndarray:
        return np.asarray(self.low, dtype=np.float64)

    @property
    def action_high(self) -> np.ndarray:
        return np.asarray(self.high, dtype=np.float64)


@dataclass
class StepResult:
    observation: np.ndarray
    reward: float
    done: bool
    truncated: bool = False

    @property
    def finished(self) -> bool:
        return self.done or self.truncated


REWARD_QUANTUM_BITS = 32


def quantize_reward(r: float) -> float:
    """Round to a multiple of 2**-32.

    Sums of such values stay exact in float64 while magnitudes stay below
    2**20, so any regrouping of an episode's rewards gives the same total.
    """
    return math.ldexp(round(math.ldexp(float(r), REWARD_QUANTUM_BITS)), -REWARD_QUANTUM_BITS)


class EpisodeOver(RuntimeError):
    """step() called on an environment whose episode has ended."""


class Env:
    spec: EnvSpec

    def __init__(self):
        self._t = 0
        self._over = True

    def reset(self, seed: int) -> np.ndarray:
        self._t = 0
        self._over = False
        return self._reset(np.random.default_rng(seed))

    def step(self, action) -> StepResult:
        if self._over:
            raise EpisodeOver("episode has ended; call reset() first")
        a = np.asarray(action, dtype=np.float64)
        if a.shape != (self.spec.act_dim,):
            raise ConfigError(f"action shape {a.shape} != ({self.spec.act_dim},)")
        a = np.clip(a, self.spec.action_low, self.spec.action_high)
        obs, reward, done = self._step(a)
        self._t += 1
        truncated = not done and self._t >= self.spec.max_episode_steps
        self._over = done or truncated
        return StepResult(obs, quantize_reward(reward), bool(done), bool(truncated))

    def _reset(self, rng):
        raise NotImplementedError

    def _step(self, a):
        raise NotImplementedError


class PointMass2D(Env):
    """Point mass on the plane with acceleration control.

    Observation is ``(pos, vel, goal - pos)``. Positions are clamped to
    ``[-POS_LIMIT, POS_LIMIT]`` per axis (walls zero the normal velocity) and
    speeds to ``VEL_LIMIT`` per axis. The goal sits at the origin, the start is
    drawn uniformly from an annulus around it.
    """

    DT = 0.05
    POS_LIMIT = 2.0
    VEL_LIMIT = 1.0
    CTRL_COST = 0.01
    GOAL_RADIUS = 0.1
    START_RADIUS = (0.5, 1.0)

    def __init__(self, sparse: bool = False, max_episode_steps: int = 200):
        super().__init__()
        self.sparse = sparse
        self.spec = EnvSpec(6, 2, (-1.0, -1.0), (1.0, 1.0), max_episode_steps)
        self.pos = np.zeros(2)
        self.vel = np.zeros(2)
        self.goal = np.zeros(2)

    def _obs(self):
        return np.concatenate([self.pos, self.vel, self.goal - self.pos])

    def _reset(self, rng):
        r = rng.uniform(*self.START_RADIUS)
        angle = rng.uniform(0.0, 2.0 * np.pi)
        self.goal = np.zeros(2)
        self.pos = self.goal + r * np.array([np.cos(angle), np.sin(angle)])
        self.vel = np.zeros(2)
        return self._obs()

    def set_state(self, pos, vel=(0.0, 0.0), goal=(0.0, 0.0)):
        """Place the mass directly (tests and controllers)."""
        self.pos = np.array(pos, dtype=np.float64)
        self.vel = np.array(vel, dtype=np.float64)
        self.goal = np.array(goal, dtype=np.float64)
        self._t = 0
        self._over = False
        return self._obs()

    def _step(self, a):
        ctrl = self.CTRL_COST * float(a @ a)
        if not self.sparse:
            # cost of the state the action is applied in
            diff = self.pos - self.goal
            reward = -float(diff @ diff) - ctrl
        self.vel = np.clip(self.vel + self.DT * a, -self.VEL_LIMIT, self.VEL_LIMIT)
        pos = self.pos + self.DT * self.vel
        hit = np.abs(pos) > self.POS_LIMIT
        self.vel[hit] = 0.0
        self.pos = np.clip(pos, -self.POS_LIMIT, self.POS_LIMIT)
        done = False
        if self.sparse:
            if np.linalg.norm(self.pos - self.goal) < self.GOAL_RADIUS:
                reward, done = 1.0, True
            else:
                reward = -ctrl
        return self._obs(), reward, done


class PendulumSwingup(Env):
    """Classic torque-limited pendulum; starts near hanging-down, reward peaks upright."""

    MAX_SPEED = 8.0
    MAX_TORQUE = 2.0
    DT = 0.05
    G = 10.0
    M = 1.0
    L = 1.0

    def __init__(self, max_episode_steps: int = 200):
        super().__init__()
        self.spec = EnvSpec(3, 1, (-self.MAX_TORQUE,), (self.MAX_TORQUE,), max_episode_steps)
        self.theta = 0.0
        self.theta_dot = 0.0

    def _obs(self):
        return np.array([np.cos(self.theta), np.sin(self.theta), self.theta_dot])

    def _reset(self, rng):
        self.theta = np.pi + rng.uniform(-0.2, 0.2)
        self.theta_dot = rng.uniform(-0.2, 0.2)
        return self._obs()

    def _step(self, a):
        u = float(a[0])
        th = ((self.theta + np.pi) % (2.0 * np.pi)) - np.pi
        cost = th * th + 0.1 * self.theta_dot**2 + 0.001 * u * u
        acc = 3.0 * self.G / (2.0 * self.L) * np.sin(self.theta) + 3.0 / (self.M * self.L**2) * u
        self.theta_dot = float(np.clip(self.theta_dot + acc * self.DT, -self.MAX_SPEED, self.MAX_SPEED))
        self.theta = self.theta + self.theta_dot * self.DT
        return self._obs(), -cost, False


class DelayedReward(Env):
    """Emit zero reward except every ``f_reward`` steps, when the accumulated sum is paid out.

    On episode end the remainder is flushed (``flush=True``, default) so the
    episode return is unchanged, or discarded (``flush=False``).
    """

    def __init__(self, inner: Env, f_reward: int = 20, flush: bool = True):
        if int(f_reward) != f_reward or f_reward < 1:
            raise ConfigError(f"f_reward must be a positive integer, got {f_reward}")
        super().__init__()
        self.inner = inner
        self.f_reward = int(f_reward)
        self.flush = flush
        self.spec = inner.spec
        self.accumulator = 0.0
        self.steps_since_emit = 0

    def reset(self, seed: int) -> np.ndarray:
        self.accumulator = 0.0
        self.steps_since_emit = 0
        return self.inner.reset(seed)

    def step(self, action) -> StepResult:
        res = self.inner.step(action)
        self.accumulator += res.reward
        self.steps_since_emit += 1
        emit = 0.0
        if self.steps_since_emit == self.f_reward:
            emit = self.accumulator
            self.accumulator, self.steps_since_emit = 0.0, 0
        elif res.finished:
            emit = self.accumulator if self.flush else 0.0
            self.accumulator, self.steps_since_emit = 0.0, 0
        return StepResult(res.observation, emit, res.done, res.truncated)


def delayed_wrap(env: Env, f_reward: int, flush: bool = True) -> DelayedReward:
    return DelayedReward(env, f_reward, flush)


_BASE = {
    "pointmass-dense": lambda: PointMass2D(sparse=False),
    "pointmass-sparse": lambda: PointMass2D(sparse=True),
    "pendulum": PendulumSwingup,
}


def make_env(env_id: str) -> Env:
    if env_id.startswith("delayed:"):
        parts = env_id.split(":")
        if len(parts) != 3:
            raise ConfigError(f"expected delayed:<id>:<f>, got {env_id!r}")
        try:
            f = int(parts[2])
        except ValueError:
            raise ConfigError(f"bad f_reward in {env_id!r}") from None
        return delayed_wrap(make_env(parts[1]), f)
    if env_id not in _BASE:
        raise ConfigError(f"unknown environment {env_id!r}; known: {sorted(_BASE)}")
    return _BASE[env_id]()


def env_reset(env: Env, seed: int) -> np.ndarray:
    return env.reset(seed)


def env_step(env: Env, action) -> StepResult:
    return env.step(action)
