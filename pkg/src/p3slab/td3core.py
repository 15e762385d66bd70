"""A single TD3 learner on the numpy MLP core.

The learner is split in two pieces so the lockstep scheduler can run all
environment interactions before any update:

* :class:`Learner` holds the six networks, three Adam states, the
  minibatch/target-noise RNG and the update counter.
* :class:`Rollout` holds one environment copy, its current observation, the
  exploration-noise RNG and the completed-episode returns.

Normally learner ``i`` owns rollout ``i``; the shared-parameter baseline
drives several rollouts from a single learner.
"""
from __future__ import annotations

import json
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .envsuite import Env, EnvSpec
from .numcore import (
    ConfigError,
    NetworkParams,
    NumericError,
    adam_init,
    adam_step,
    hard_copy,
    load_params,
    mlp_backward,
    mlp_forward,
    mlp_init,
    save_params,
    soft_update,
)
from .replay import Batch, ReplayBuffer, Transition


@dataclass
class TD3Hyper:
    gamma: float = 0.99
    tau: float = 0.005
    lr: float = 1e-3
    batch_size: int = 100
    policy_delay: int = 2
    expl_noise: float = 0.1
    target_noise: float = 0.2
    noise_clip: float = 0.5
    t_initial: int = 1000
    hidden: tuple = (400, 300)
    buffer_size: int = 1_000_000

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError(f"gamma must lie in (0, 1), got {self.gamma}")
        if not 0.0 < self.tau <= 1.0:
            raise ConfigError(f"tau must lie in (0, 1], got {self.tau}")
        if self.policy_delay < 1 or self.batch_size < 1 or self.t_initial < 0:
            raise ConfigError("policy_delay and batch_size must be >= 1, t_initial >= 0")
        if min(self.expl_noise, self.target_noise, self.noise_clip) < 0:
            raise ConfigError("noise parameters must be non-negative")
        if self.lr < 0:
            raise ConfigError(f"learning rate must be non-negative, got {self.lr}")


# Small network profile for desk-scale runs and tests.
SMALL_HIDDEN = (64, 64)


@dataclass
class Augmentation:
    """Pull toward a frozen anchor policy: adds (beta/2)||pi(s) - anchor(s)||^2 to the actor loss."""

    beta: float
    anchor: NetworkParams


@dataclass(eq=False)
class Learner:
    spec: EnvSpec
    hyper: TD3Hyper
    actor: NetworkParams
    critic1: NetworkParams
    critic2: NetworkParams
    actor_target: NetworkParams
    critic1_target: NetworkParams
    critic2_target: NetworkParams
    actor_opt: object
    critic1_opt: object
    critic2_opt: object
    rng: np.random.Generator
    updates: int = 0
    actor_updates: int = 0

    @classmethod
    def create(cls, spec: EnvSpec, hyper: TD3Hyper, init_seed, rng: np.random.Generator):
        seeds = np.random.SeedSequence(init_seed).generate_state(3)
        actor = mlp_init([spec.obs_dim, *hyper.hidden, spec.act_dim], "tanh", int(seeds[0]))
        sa = spec.obs_dim + spec.act_dim
        c1 = mlp_init([sa, *hyper.hidden, 1], "linear", int(seeds[1]))
        c2 = mlp_init([sa, *hyper.hidden, 1], "linear", int(seeds[2]))
        return cls(spec, hyper, actor, c1, c2, hard_copy(actor), hard_copy(c1), hard_copy(c2),
                   adam_init(actor), adam_init(c1), adam_init(c2), rng)

    @property
    def scale(self) -> np.ndarray:
        return 0.5 * (self.spec.action_high - self.spec.action_low)

    @property
    def shift(self) -> np.ndarray:
        return 0.5 * (self.spec.action_high + self.spec.action_low)

    def copy_state_from(self, other: "Learner") -> None:
        """Take over another learner's networks and optimizer states (not its RNG)."""
        for name in NET_NAMES:
            setattr(self, name, hard_copy(getattr(other, name)))
        for name in OPT_NAMES:
            setattr(self, name, getattr(other, name).copy())


NET_NAMES = ("actor", "critic1", "critic2", "actor_target", "critic1_target", "critic2_target")
OPT_NAMES = ("actor_opt", "critic1_opt", "critic2_opt")


def policy_actions(actor: NetworkParams, states, scale=1.0, shift=0.0):
    """Deterministic actions of `actor` mapped from tanh range onto the action box."""
    out, _ = mlp_forward(actor, states)
    return shift + scale * out


def act_eval(learner: Learner, obs) -> np.ndarray:
    return policy_actions(learner.actor, obs, learner.scale, learner.shift)


def act_explore(learner: Learner, obs, t: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform random action before t_initial, then pi(obs) + N(0, sigma^2) clipped to the box."""
    spec = learner.spec
    if t < learner.hyper.t_initial:
        return rng.uniform(spec.action_low, spec.action_high)
    a = act_eval(learner, obs)
    if learner.hyper.expl_noise > 0:
        a = a + rng.normal(0.0, learner.hyper.expl_noise, size=spec.act_dim) * learner.scale
    return np.clip(a, spec.action_low, spec.action_high)


def _q(critic, s, a):
    return mlp_forward(critic, np.concatenate([s, a], axis=1))


def compute_target(learner: Learner, batch: Batch, noise=None) -> np.ndarray:
    """y = r + gamma (1 - done) min_j Q'_j(s', clip(pi'(s') + eps)).

    `noise` overrides the clipped Gaussian target-policy noise (shape batch x act_dim).
    """
    h = learner.hyper
    spec = learner.spec
    a_next = policy_actions(learner.actor_target, batch.s_next, learner.scale, learner.shift)
    if noise is None:
        noise = np.clip(learner.rng.normal(0.0, h.target_noise, size=a_next.shape),
                        -h.noise_clip, h.noise_clip) * learner.scale
    a_next = np.clip(a_next + noise, spec.action_low, spec.action_high)
    q1, _ = _q(learner.critic1_target, batch.s_next, a_next)
    q2, _ = _q(learner.critic2_target, batch.s_next, a_next)
    q = np.minimum(q1[:, 0], q2[:, 0])
    return batch.r + h.gamma * (1.0 - batch.done) * q


def critic_loss_grad(critic: NetworkParams, s, a, y):
    """Mean squared TD error and its gradient w.r.t. the critic parameters."""
    q, cache = _q(critic, s, a)
    diff = q[:, 0] - y
    loss = float(np.mean(diff * diff))
    if not np.isfinite(loss):
        raise NumericError(f"critic loss is {loss}")
    grads = mlp_backward(critic, cache, (2.0 / len(y)) * diff[:, None])
    return loss, grads.flat


def actor_loss_grad(actor: NetworkParams, critic: NetworkParams, s, scale=1.0, shift=0.0,
                    augmentation: Augmentation | None = None):
    """Mean of -Q(s, pi(s)) [+ (beta/2)||pi(s) - anchor(s)||^2] and its gradient w.r.t. the actor."""
    n = len(s)
    u, a_cache = mlp_forward(actor, s)
    a = shift + scale * u
    q, q_cache = _q(critic, s, a)
    loss = -float(np.mean(q))
    dq = mlp_backward(critic, q_cache, np.full((n, 1), 1.0 / n))
    da = -dq.input[:, s.shape[1]:]
    if augmentation is not None and augmentation.beta != 0.0:
        a_anchor = policy_actions(augmentation.anchor, s, scale, shift)
        diff = a - a_anchor
        beta = augmentation.beta
        loss += 0.5 * beta * float(np.sum(diff * diff)) / n
        da = da + (beta / n) * diff
    if not np.isfinite(loss):
        raise NumericError(f"actor loss is {loss}")
    grads = mlp_backward(actor, a_cache, da * scale)
    return loss, grads.flat


def critic_update(learner: Learner, batch: Batch, y=None):
    if y is None:
        y = compute_target(learner, batch)
    lr = learner.hyper.lr
    loss1, g1 = critic_loss_grad(learner.critic1, batch.s, batch.a, y)
    loss2, g2 = critic_loss_grad(learner.critic2, batch.s, batch.a, y)
    if lr > 0:
        learner.critic1, learner.critic1_opt = adam_step(learner.critic1, g1, learner.critic1_opt, lr)
        learner.critic2, learner.critic2_opt = adam_step(learner.critic2, g2, learner.critic2_opt, lr)
    return loss1, loss2


def actor_update(learner: Learner, batch: Batch, augmentation: Augmentation | None = None) -> float:
    """One actor step on the (optionally augmented) policy loss, then soft target updates."""
    h = learner.hyper
    loss, g = actor_loss_grad(learner.actor, learner.critic1, batch.s, learner.scale, learner.shift,
                              augmentation)
    if h.lr > 0:
        learner.actor, learner.actor_opt = adam_step(learner.actor, g, learner.actor_opt, h.lr)
    learner.actor_target = soft_update(learner.actor_target, learner.actor, h.tau)
    learner.critic1_target = soft_update(learner.critic1_target, learner.critic1, h.tau)
    learner.critic2_target = soft_update(learner.critic2_target, learner.critic2, h.tau)
    learner.actor_updates += 1
    return loss


def learner_update(learner: Learner, buffer: ReplayBuffer, augmentation: Augmentation | None = None):
    """One critic step; every `policy_delay`-th call also an actor/target step."""
    batch = buffer.sample(learner.hyper.batch_size, learner.rng)
    losses = critic_update(learner, batch)
    learner.updates += 1
    if learner.updates % learner.hyper.policy_delay == 0:
        actor_update(learner, batch, augmentation)
    return losses


@dataclass(eq=False)
class Rollout:
    env: Env
    noise_rng: np.random.Generator
    env_rng: np.random.Generator
    history: int = 100
    obs: np.ndarray = None
    returns: deque = field(default=None)
    episode_return: float = 0.0
    episode_steps: int = 0
    episodes: int = 0
    steps: int = 0

    def __post_init__(self):
        if self.returns is None:
            self.returns = deque(maxlen=self.history)
        if self.obs is None:
            self.obs = self.env.reset(self._next_seed())

    def _next_seed(self) -> int:
        return int(self.env_rng.integers(2**63))


def interact(learner: Learner, rollout: Rollout, buffer: ReplayBuffer, t: int) -> Transition:
    """Act once in the rollout's environment and append the transition to the buffer."""
    a = act_explore(learner, rollout.obs, t, rollout.noise_rng)
    res = rollout.env.step(a)
    # truncation is not a terminal state: keep bootstrapping through it
    tr = Transition(rollout.obs, a, res.reward, res.observation, 1.0 if res.done else 0.0)
    buffer.append(tr)
    rollout.steps += 1
    rollout.episode_return += res.reward
    rollout.episode_steps += 1
    if res.finished:
        rollout.returns.append(rollout.episode_return)
        rollout.episodes += 1
        rollout.episode_return, rollout.episode_steps = 0.0, 0
        rollout.obs = rollout.env.reset(rollout._next_seed())
    else:
        rollout.obs = res.observation
    return tr


def learner_tick(learner: Learner, rollout: Rollout, buffer: ReplayBuffer, t: int,
                 augmentation: Augmentation | None = None) -> None:
    interact(learner, rollout, buffer, t)
    if t >= learner.hyper.t_initial:
        learner_update(learner, buffer, augmentation)


def _rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def save_checkpoint(learner: Learner, directory, extra: dict | None = None) -> None:
    """One snapshot file per network (plus Adam moments) and a JSON manifest."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for name in NET_NAMES:
        save_params(getattr(learner, name), d / f"{name}.pnet")
    opts = {}
    for name in OPT_NAMES:
        opt = getattr(learner, name)
        net = getattr(learner, name[:-4])
        save_params(net.like(opt.m), d / f"{name}.m.pnet")
        save_params(net.like(opt.v), d / f"{name}.v.pnet")
        opts[name] = {"step": opt.step, "beta1": opt.beta1, "beta2": opt.beta2, "eps": opt.eps}
    manifest = {
        "format": 1,
        "updates": learner.updates,
        "actor_updates": learner.actor_updates,
        "hyper": asdict(learner.hyper),
        "spec": asdict(learner.spec),
        "optimizers": opts,
        "rng": _rng_state(learner.rng),
    }
    if extra:
        manifest.update(extra)
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def load_checkpoint(directory) -> Learner:
    from .numcore import AdamState

    d = Path(directory)
    manifest = json.loads((d / "manifest.json").read_text())
    spec_d = manifest["spec"]
    spec = EnvSpec(spec_d["obs_dim"], spec_d["act_dim"], tuple(spec_d["low"]), tuple(spec_d["high"]),
                   spec_d["max_episode_steps"])
    hyper = TD3Hyper(**manifest["hyper"])
    nets = {name: load_params(d / f"{name}.pnet") for name in NET_NAMES}
    opts = {}
    for name in OPT_NAMES:
        meta = manifest["optimizers"][name]
        m = load_params(d / f"{name}.m.pnet").flat
        v = load_params(d / f"{name}.v.pnet").flat
        opts[name] = AdamState(m, v, meta["step"], meta["beta1"], meta["beta2"], meta["eps"])
    rng = np.random.Generator(np.random.PCG64())
    rng.bit_generator.state = manifest["rng"]
    return Learner(spec, hyper, rng=rng, updates=manifest["updates"],
                   actor_updates=manifest["actor_updates"], **nets, **opts)
