"""Parallel learning schemes sharing one lockstep loop, one buffer type and one TD3 learner.

Each scheme is a small coordinator the harness consults once per global
timestep: which learner drives each rollout, which updates to run (and with
what actor-loss augmentation), and what to do after the updates (chief
sync, reset, center-policy fit).
"""
from __future__ import annotations

import math

import numpy as np

from .numcore import adam_init, adam_step, hard_copy, mlp_backward, mlp_forward
from .popsearch import ChiefState, chief_sync, mean_msd, recent_score, select_best
from .td3core import Augmentation, policy_actions


class Scheme:
    name = "eso"
    parallel_updates = True

    def __init__(self, cfg):
        self.cfg = cfg
        self.n = cfg.scheme.n_learners

    @property
    def n_learners(self) -> int:
        return self.n

    def setup(self, learners, rollouts, buffer, rng):
        self.learners, self.rollouts, self.buffer, self.rng = learners, rollouts, buffer, rng

    def learner_of(self, i: int) -> int:
        return i

    def update_plan(self):
        return [(j, None) for j in range(self.n_learners)]

    def after_updates(self, t: int):
        return None

    def status(self) -> dict:
        return {}

    def histories(self):
        return [ro.returns for ro in self.rollouts]

    def recent(self):
        return [recent_score(h, self.cfg.p3s.recent_episodes) for h in self.histories()]

    @staticmethod
    def due(t: int, period) -> bool:
        return not math.isinf(period) and (t + 1) % int(period) == 0


class SingleScheme(Scheme):
    """Plain TD3: one learner, one environment."""

    name = "single"


class ESOScheme(Scheme):
    """Experience sharing only: N independent learners on the shared buffer."""

    name = "eso"


class DRLScheme(Scheme):
    """One parameter set driving N environment copies; N sequential updates per timestep."""

    name = "drl"
    parallel_updates = False

    @property
    def n_learners(self) -> int:
        return 1

    def learner_of(self, i: int) -> int:
        return 0

    def update_plan(self):
        return [(0, None)] * self.n


class ResettingScheme(Scheme):
    """ESO plus a periodic hard copy of the best learner's full state into every learner."""

    name = "resetting"

    def setup(self, *args):
        super().setup(*args)
        self.b = 0

    def after_updates(self, t):
        if not self.due(t, self.cfg.scheme.reset_period):
            return None
        self.b = select_best(self.histories(), self.cfg.p3s.recent_episodes, self.b)
        best = self.learners[self.b]
        for j, lr in enumerate(self.learners):
            if j != self.b:
                lr.copy_state_from(best)
        return {"best_index": self.b, "recent": self.recent()}

    def status(self):
        return {"best_index": self.b}


class P3SScheme(Scheme):
    """Population-guided search: non-best learners are pulled toward a frozen best actor."""

    name = "p3s"

    def setup(self, *args):
        super().setup(*args)
        self.chief = ChiefState.initial([lr.actor for lr in self.learners], self.cfg.p3s)

    def update_plan(self):
        return [(j, self.chief.augmentation(j)) for j in range(self.n)]

    def after_updates(self, t):
        if not self.due(t, self.cfg.p3s.sync_period):
            return None
        lr0 = self.learners[0]
        self.chief = chief_sync(self.chief, [lr.actor for lr in self.learners], self.histories(),
                                self.buffer, self.cfg.p3s, self.rng, lr0.scale, lr0.shift)
        c = self.chief
        return {"best_index": c.b, "beta": c.beta, "d_spread": c.d_spread, "d_change": c.d_change,
                "recent": self.recent()}

    def status(self):
        c = self.chief
        return {"best_index": c.b, "beta": c.beta, "d_spread": c.d_spread, "d_change": c.d_change}


def center_loss_grad(center, actors, states, beta, scale=1.0, shift=0.0):
    """(beta/2) * mean over states of sum_i ||pi_i(s) - pi_c(s)||^2, gradient w.r.t. the center."""
    u, cache = mlp_forward(center, states)
    a_c = shift + scale * u
    n = len(states)
    loss = 0.0
    da = np.zeros_like(a_c)
    for actor in actors:
        diff = policy_actions(actor, states, scale, shift) - a_c
        loss += beta * mean_msd(diff, 0.0)
        da -= (beta / n) * diff
    grads = mlp_backward(center, cache, da * scale)
    return loss, grads.flat


class CenterScheme(Scheme):
    """All learners pulled toward a center actor that is periodically fit to the population."""

    name = "center"

    def setup(self, *args):
        super().setup(*args)
        self.center = hard_copy(self.learners[0].actor)
        self.center_opt = adam_init(self.center)
        self.center_loss = math.nan

    def update_plan(self):
        aug = Augmentation(self.cfg.scheme.center_beta, self.center)
        return [(j, aug) for j in range(self.n)]

    def fit_center(self, states):
        sc = self.cfg.scheme
        lr0 = self.learners[0]
        actors = [lr.actor for lr in self.learners]
        losses = []
        for _ in range(sc.center_steps):
            loss, g = center_loss_grad(self.center, actors, states, sc.center_beta, lr0.scale, lr0.shift)
            losses.append(loss)
            self.center, self.center_opt = adam_step(self.center, g, self.center_opt, lr0.hyper.lr)
        return losses

    def after_updates(self, t):
        sc = self.cfg.scheme
        if not self.due(t, sc.center_period):
            return None
        states = self.buffer.sample_states(sc.center_batch, self.rng)
        self.center_loss = self.fit_center(states)[-1]
        return {"recent": self.recent()}


_SCHEMES = {cls.name: cls for cls in (SingleScheme, ESOScheme, DRLScheme, ResettingScheme,
                                       P3SScheme, CenterScheme)}


def make_scheme(cfg) -> Scheme:
    return _SCHEMES[cfg.scheme.name](cfg)


def _run(cfg, name, **kw):
    from dataclasses import replace

    from .harness import run

    cfg = replace(cfg, scheme=replace(cfg.scheme, name=name))
    return run(cfg, **kw)


def run_single(cfg, **kw):
    from dataclasses import replace

    cfg = replace(cfg, scheme=replace(cfg.scheme, name="single", n_learners=1))
    return _run(cfg, "single", **kw)


def run_drl(cfg, **kw):
    return _run(cfg, "drl", **kw)


def run_eso(cfg, **kw):
    return _run(cfg, "eso", **kw)


def run_resetting(cfg, **kw):
    return _run(cfg, "resetting", **kw)


def run_center(cfg, **kw):
    return _run(cfg, "center", **kw)


def run_p3s(cfg, **kw):
    return _run(cfg, "p3s", **kw)
