"""The P3S chief: best-learner selection, frozen best-policy anchor and beta adaptation."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .numcore import ConfigError, NetworkParams, hard_copy
from .td3core import Augmentation, policy_actions


@dataclass
class P3SHyper:
    sync_period: int = 250
    recent_episodes: int = 10
    rho: float = 2.0
    d_min: float = 0.05
    beta_init: float = 1.0
    beta_min: float = 1e-4
    beta_max: float = 1e4
    distance_batch: int = 1000

    def __post_init__(self):
        if self.sync_period < 1 or self.recent_episodes < 1 or self.distance_batch < 1:
            raise ConfigError("sync_period, recent_episodes and distance_batch must be >= 1")
        if not (self.rho > 0 and self.d_min > 0):
            raise ConfigError("rho and d_min must be positive")
        if not 0 <= self.beta_min <= self.beta_max:
            raise ConfigError("need 0 <= beta_min <= beta_max")


def recent_score(returns, recent: int) -> float:
    r = list(returns)[-recent:]
    return float(np.mean(r)) if r else -math.inf


def select_best(histories, recent: int, incumbent: int) -> int:
    """Index with the highest mean of its last `recent` episode returns.

    Learners without a finished episode score -inf. The incumbent keeps the
    title on ties; otherwise the lowest tied index wins.
    """
    scores = [recent_score(h, recent) for h in histories]
    top = max(scores)
    if top == -math.inf:
        return incumbent
    if 0 <= incumbent < len(scores) and scores[incumbent] == top:
        return incumbent
    return scores.index(top)


def msd_distance(a1, a2) -> float:
    a1, a2 = np.asarray(a1, dtype=np.float64), np.asarray(a2, dtype=np.float64)
    if a1.shape != a2.shape:
        raise ConfigError(f"action shapes differ: {a1.shape} vs {a2.shape}")
    d = a1 - a2
    return 0.5 * float(np.sum(d * d))


def mean_msd(x, y) -> float:
    """Batch mean of 0.5 * ||x_k - y_k||^2 over rows."""
    d = x - y
    return 0.5 * float(np.mean(np.sum(d * d, axis=1)))


def estimate_distances(actors, old_snapshots, best_snapshot, b: int, states, scale=1.0, shift=0.0):
    """(D_spread, D_change) averaged over the non-best learners and the state batch."""
    states = np.asarray(states)
    if states.ndim != 2 or len(states) == 0:
        raise ConfigError("state batch must be a non-empty matrix")
    others = [i for i in range(len(actors)) if i != b]
    if not others:
        return 0.0, 0.0
    a_best = policy_actions(best_snapshot, states, scale, shift)
    spread = change = 0.0
    for i in others:
        a_i = policy_actions(actors[i], states, scale, shift)
        spread += mean_msd(a_i, a_best)
        change += mean_msd(a_i, policy_actions(old_snapshots[i], states, scale, shift))
    return spread / len(others), change / len(others)


def adapt_beta(beta: float, d_spread: float, d_change: float, rho: float, d_min: float,
               beta_min: float = 1e-4, beta_max: float = 1e4) -> float:
    """Double beta when the spread exceeds 1.5x the search radius, halve it below radius/1.5."""
    radius = max(rho * d_change, d_min)
    if d_spread > radius * 1.5:
        beta = 2.0 * beta
    elif d_spread < radius / 1.5:
        beta = beta / 2.0
    return min(max(beta, beta_min), beta_max)


@dataclass(eq=False)
class ChiefState:
    b: int
    beta: float
    best_snapshot: NetworkParams
    old_snapshots: list
    d_spread: float = math.nan
    d_change: float = math.nan
    syncs: int = 0
    log: list = field(default_factory=list)

    @classmethod
    def initial(cls, actors, hyper: P3SHyper, b: int = 0) -> "ChiefState":
        return cls(b, float(np.clip(hyper.beta_init, hyper.beta_min, hyper.beta_max)),
                   hard_copy(actors[b]), [hard_copy(a) for a in actors])

    def augmentation(self, i: int):
        if i == self.b or self.beta == 0.0:
            return None
        return Augmentation(self.beta, self.best_snapshot)


def chief_sync(chief: ChiefState, actors, histories, buffer, hyper: P3SHyper,
               rng: np.random.Generator, scale=1.0, shift=0.0) -> ChiefState:
    """Select the best learner, freeze its actor, re-estimate distances and adapt beta.

    Returns a new state; the anchor and beta it carries govern the next period.
    """
    b = select_best(histories, hyper.recent_episodes, chief.b)
    best = hard_copy(actors[b])
    states = buffer.sample_states(hyper.distance_batch, rng)
    d_spread, d_change = estimate_distances(actors, chief.old_snapshots, best, b, states, scale, shift)
    beta = adapt_beta(chief.beta, d_spread, d_change, hyper.rho, hyper.d_min,
                      hyper.beta_min, hyper.beta_max)
    return ChiefState(b, beta, best, [hard_copy(a) for a in actors], d_spread, d_change,
                      chief.syncs + 1, chief.log)
