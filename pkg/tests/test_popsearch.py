import math
from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from p3slab.numcore import ConfigError, hard_copy, mlp_init
from p3slab.popsearch import (ChiefState, P3SHyper, adapt_beta, chief_sync, estimate_distances,
                              msd_distance, recent_score, select_best)
from p3slab.replay import ReplayBuffer, Transition


def hist(*means):
    return [deque([m]) if m is not None else deque() for m in means]


def beta_oracle(beta, spread, change, rho, d_min, lo, hi):
    radius = rho * change if rho * change > d_min else d_min
    if spread > 1.5 * radius:
        beta *= 2
    elif spread < radius / 1.5:
        beta /= 2
    if beta < lo:
        beta = lo
    if beta > hi:
        beta = hi
    return beta


def filled_buffer(n=200, obs_dim=3, seed=0):
    rng = np.random.default_rng(seed)
    buf = ReplayBuffer(obs_dim, 2, n)
    for _ in range(n):
        buf.append(Transition(rng.normal(size=obs_dim), rng.uniform(-1, 1, 2), 0.0, rng.normal(size=obs_dim)))
    return buf


def test_hyper_defaults():
    h = P3SHyper()
    assert (h.sync_period, h.recent_episodes, h.rho, h.d_min, h.beta_init) == (250, 10, 2.0, 0.05, 1.0)
    with pytest.raises(ConfigError):
        P3SHyper(beta_min=2.0, beta_max=1.0)


def test_select_best_examples():
    assert select_best(hist(1.0, 3.0, 2.0, 3.0), 10, 3) == 3
    assert select_best(hist(1.0, 3.0, 2.0, 2.5), 10, 0) == 1
    assert select_best(hist(None, None, None), 10, 2) == 2
    assert select_best(hist(1.0, 3.0, 3.0), 10, 0) == 1  # lowest tied index


def test_recent_score_window():
    assert recent_score([0.0] * 5 + [1.0] * 10, 10) == 1.0
    assert recent_score([], 10) == -math.inf
    assert select_best([deque([5.0, 0.0, 0.0]), deque([1.0])], 2, 0) == 1


def test_msd_examples():
    assert msd_distance([0.2, 0.1], [0.2, 0.1]) == 0.0
    assert msd_distance([0.3, -0.2], [0.1, 0.2]) == pytest.approx(0.1, abs=1e-15)
    with pytest.raises(ConfigError):
        msd_distance([0.0], [0.0, 1.0])


@given(a=st.lists(st.floats(-10, 10), min_size=3, max_size=3), b=st.lists(st.floats(-10, 10), min_size=3, max_size=3))
def test_msd_symmetric_nonnegative(a, b):
    assert msd_distance(a, b) == msd_distance(b, a) >= 0


def test_estimate_distances_cases():
    states = np.random.default_rng(0).normal(size=(50, 3))
    actors = [mlp_init([3, 8, 2], "tanh", seed=k) for k in range(3)]
    same = [hard_copy(actors[0]) for _ in range(3)]
    spread, change = estimate_distances(same, same, actors[0], 0, states)
    assert spread == 0.0 and change == 0.0
    spread, change = estimate_distances(actors, actors, actors[2], 2, states)
    assert change == 0.0 and spread > 0
    # two learners: spread is the single pair's mean distance
    from p3slab.td3core import policy_actions
    pair, _ = estimate_distances(actors[:2], actors[:2], actors[1], 1, states)
    a0, a1 = policy_actions(actors[0], states), policy_actions(actors[1], states)
    assert pair == pytest.approx(np.mean([msd_distance(x, y) for x, y in zip(a0, a1)]), rel=1e-12)
    assert estimate_distances(actors[:1], actors[:1], actors[0], 0, states) == (0.0, 0.0)


def test_adapt_beta_examples():
    assert adapt_beta(1.0, 0.5, 0.1, 2.0, 0.02) == 2.0
    assert adapt_beta(1.0, 0.1, 0.1, 2.0, 0.02) == 0.5
    assert adapt_beta(1.0, 0.25, 0.1, 2.0, 0.02) == 1.0
    # d_min binds when the change is small
    assert adapt_beta(1.0, 0.25, 0.0, 2.0, 0.2) == 1.0
    assert adapt_beta(1e4, 10.0, 0.0, 2.0, 0.05) == 1e4
    assert adapt_beta(1e-4, 0.0, 0.0, 2.0, 0.05) == 1e-4
    assert adapt_beta(0.0, 5.0, 0.0, 2.0, 0.05, 0.0, 0.0) == 0.0


def test_beta_trace_matches_scalar_oracle():
    rng = np.random.default_rng(0)
    spread = np.exp(rng.uniform(-8, 3, 10_000))
    change = np.exp(rng.uniform(-8, 1, 10_000))
    beta = ref = 1.0
    for sp, ch in zip(spread, change):
        beta = adapt_beta(beta, sp, ch, 2.0, 0.05, 1e-4, 1e4)
        ref = beta_oracle(ref, sp, ch, 2.0, 0.05, 1e-4, 1e4)
        assert beta == ref


@given(beta=st.floats(1e-3, 1e3), steps=st.integers(1, 50), frac=st.floats(0.7, 1.4), change=st.floats(0, 1))
def test_dead_zone_keeps_beta_constant(beta, steps, frac, change):
    radius = max(2.0 * change, 0.05)
    b = beta
    for _ in range(steps):
        b = adapt_beta(b, frac * radius, change, 2.0, 0.05)
    assert b == beta


def test_closed_loop_beta_settles_spread_near_radius():
    # synthetic population whose spread shrinks as the pull strengthens
    rng = np.random.default_rng(1)
    beta, inside = 1.0, 0
    for _ in range(300):
        spread = 0.5 / beta * rng.lognormal(0, 0.2)
        radius = max(2.0 * 0.01, 0.05)
        inside += radius / 1.5 <= spread <= 1.5 * radius
        beta = adapt_beta(beta, spread, 0.01, 2.0, 0.05)
    assert inside > 150


def test_chief_initial_state():
    actors = [mlp_init([3, 8, 2], "tanh", seed=k) for k in range(3)]
    c = ChiefState.initial(actors, P3SHyper())
    assert c.b == 0 and c.beta == 1.0
    assert np.array_equal(c.best_snapshot.flat, actors[0].flat)
    assert c.augmentation(0) is None and c.augmentation(1).beta == 1.0


def test_chief_sync_two_learners():
    actors = [mlp_init([3, 8, 2], "tanh", seed=k) for k in range(2)]
    chief = ChiefState.initial(actors, P3SHyper())
    buf = filled_buffer()
    chief = chief_sync(chief, actors, hist(0.0, 1.0), buf, P3SHyper(), np.random.default_rng(0))
    assert chief.b == 1 and chief.syncs == 1
    assert chief.augmentation(1) is None
    aug = chief.augmentation(0)
    assert np.array_equal(aug.anchor.flat, actors[1].flat)
    # snapshots were refreshed: unchanged actors show zero change at the next sync
    nxt = chief_sync(chief, actors, hist(0.0, 1.0), buf, P3SHyper(), np.random.default_rng(1))
    assert nxt.d_change == 0.0


def test_best_snapshot_frozen():
    actors = [mlp_init([3, 8, 2], "tanh", seed=k) for k in range(3)]
    chief = chief_sync(ChiefState.initial(actors, P3SHyper()), actors, hist(0.0, 2.0, 1.0),
                       filled_buffer(), P3SHyper(), np.random.default_rng(0))
    before = chief.best_snapshot.flat.copy()
    actors[1].flat[:] += 1.0  # learner b keeps training
    assert np.array_equal(chief.augmentation(0).anchor.flat, before)


def test_logged_trace_replays():
    actors = [mlp_init([3, 8, 2], "tanh", seed=k) for k in range(4)]
    hyper = P3SHyper()
    chief = ChiefState.initial(actors, hyper)
    rng = np.random.default_rng(0)
    buf = filled_buffer()
    log = []
    for k in range(20):
        for a in actors:
            a.flat[:] += 0.05 * rng.normal(size=a.flat.size)
        chief = chief_sync(chief, actors, hist(*rng.normal(size=4)), buf, hyper, rng)
        log.append((chief.d_spread, chief.d_change, chief.beta))
    beta = hyper.beta_init
    for sp, ch, logged in log:
        beta = adapt_beta(beta, sp, ch, hyper.rho, hyper.d_min, hyper.beta_min, hyper.beta_max)
        assert beta == logged
