import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from p3slab.envsuite import (DelayedReward, Env, EnvSpec, EpisodeOver, PendulumSwingup, PointMass2D,
                             StepResult, delayed_wrap, env_reset, env_step, make_env, quantize_reward)
from p3slab.numcore import ConfigError


class ScriptedEnv(Env):
    """Pays a fixed reward sequence and terminates after its last entry."""

    def __init__(self, rewards, terminal=True):
        super().__init__()
        self.rewards = list(rewards)
        self.terminal = terminal
        self.spec = EnvSpec(1, 1, (-1.0,), (1.0,), len(self.rewards) if not terminal else 10**6)

    def _reset(self, rng):
        self.k = 0
        return np.zeros(1)

    def _step(self, a):
        r = self.rewards[self.k]
        self.k += 1
        return np.array([float(self.k)]), r, self.terminal and self.k == len(self.rewards)


def emitted(env, n=None):
    env.reset(0)
    out = []
    while True:
        res = env.step(np.zeros(env.spec.act_dim))
        out.append(res.reward)
        if res.finished or (n is not None and len(out) == n):
            return out


def test_spec_validation():
    with pytest.raises(ConfigError):
        EnvSpec(0, 1, (-1.0,), (1.0,), 10)
    with pytest.raises(ConfigError):
        EnvSpec(1, 1, (1.0,), (1.0,), 10)
    with pytest.raises(ConfigError):
        EnvSpec(1, 1, (-1.0,), (1.0,), 0)


def test_reset_deterministic_and_shaped():
    env = PointMass2D()
    a, b = env_reset(env, 7), env_reset(env, 7)
    assert np.array_equal(a, b)
    assert a.shape == (env.spec.obs_dim,)
    assert not np.array_equal(a, env_reset(env, 8))


def test_start_in_annulus():
    env = PointMass2D()
    for s in range(200):
        obs = env.reset(s)
        assert 0.5 <= np.linalg.norm(obs[:2]) <= 1.0
        assert not obs[2:4].any()


def test_dense_reward_formula():
    env = PointMass2D(sparse=False)
    env.set_state((1.0, 0.0))
    assert env_step(env, np.zeros(2)).reward == -1.0
    env.set_state((0.0, 0.0))
    assert env_step(env, np.zeros(2)).reward == 0.0
    env.set_state((0.3, -0.4))
    a = np.array([0.5, -1.0])
    assert env_step(env, a).reward == pytest.approx(-0.25 - 0.01 * 1.25, abs=2.0**-33)  # half the reward quantum


def test_sparse_reward_cost_only_and_goal_bonus():
    env = PointMass2D(sparse=True)
    env.set_state((0.8, 0.0))
    res = env.step(np.zeros(2))
    assert res.reward == 0.0 and not res.done
    res = env.step(np.array([1.0, 0.0]))
    assert res.reward == pytest.approx(-0.01)
    env.set_state((0.05, 0.0))
    res = env.step(np.zeros(2))
    assert res.reward == 1.0 and res.done


def test_step_after_end_raises():
    env = PointMass2D(sparse=True)
    env.set_state((0.0, 0.0))
    assert env.step(np.zeros(2)).done
    with pytest.raises(EpisodeOver):
        env.step(np.zeros(2))
    with pytest.raises(EpisodeOver):
        PointMass2D().step(np.zeros(2))  # never reset


def test_truncation_distinct_from_termination():
    env = PointMass2D(sparse=False, max_episode_steps=5)
    env.reset(0)
    results = [env.step(np.zeros(2)) for _ in range(5)]
    assert all(not r.done for r in results)
    assert results[-1].truncated and not any(r.truncated for r in results[:-1])


def test_action_shape_checked_and_clipped():
    env = PointMass2D()
    env.set_state((0.0, 0.0))
    with pytest.raises(ConfigError):
        env.step(np.zeros(3))
    env.set_state((0.0, 0.0))
    env.step(np.array([50.0, -50.0]))
    assert np.allclose(env.vel, [0.05, -0.05])


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), acts=st.lists(st.tuples(st.floats(-5, 5), st.floats(-5, 5)),
                                                  min_size=1, max_size=300))
def test_pointmass_state_stays_in_clamps(seed, acts):
    env = PointMass2D(sparse=False)
    env.reset(seed)
    for a in acts:
        res = env.step(np.array(a))
        assert np.all(np.isfinite(res.observation)) and np.isfinite(res.reward)
        assert np.all(np.abs(env.pos) <= env.POS_LIMIT) and np.all(np.abs(env.vel) <= env.VEL_LIMIT)
        if res.finished:
            break


def test_trajectory_determinism():
    rng = np.random.default_rng(0)
    acts = rng.uniform(-1, 1, size=(150, 2))
    runs = []
    for _ in range(2):
        env = make_env("delayed:pointmass-sparse:20")
        obs = [env.reset(3)]
        for a in acts:
            res = env.step(a)
            obs.append(res.observation)
            if res.finished:
                break
        runs.append(np.array(obs))
    assert np.array_equal(runs[0], runs[1])


def _controller_return(controller, seeds):
    env = PointMass2D(sparse=False)
    total = []
    for s in seeds:
        obs, ret = env.reset(s), 0.0
        while True:
            res = env.step(controller(obs))
            ret += res.reward
            if res.finished:
                break
            obs = res.observation
        total.append(ret)
    return float(np.mean(total))


def test_pd_controller_beats_zero_action_dense():
    seeds = range(20)
    pd = _controller_return(lambda o: np.clip(3.0 * o[4:6] - 2.0 * o[2:4], -1, 1), seeds)
    zero = _controller_return(lambda o: np.zeros(2), seeds)
    assert pd > zero + 5.0


def test_pendulum_bounds_and_reward_sign():
    env = PendulumSwingup()
    obs = env.reset(0)
    assert obs.shape == (3,) and env.spec.act_dim == 1
    assert np.allclose(env.spec.action_high, 2.0)
    for _ in range(200):
        res = env.step(np.array([2.0]))
        assert res.reward <= 0
    assert res.truncated


def test_delayed_examples():
    assert emitted(delayed_wrap(ScriptedEnv([1, 2, 3, 4], terminal=False), 2)) == [0, 3, 0, 7]
    assert emitted(delayed_wrap(ScriptedEnv([1, 2, 3]), 2)) == [0, 3, 3]
    assert emitted(delayed_wrap(ScriptedEnv([1, 2, 3]), 2, flush=False)) == [0, 3, 0]
    assert emitted(delayed_wrap(ScriptedEnv([1.5, -2, 3]), 1)) == [1.5, -2, 3]


def test_delayed_reset_clears_accumulator():
    env = delayed_wrap(ScriptedEnv([1, 1, 1, 1, 1]), 4)
    env.reset(0)
    env.step(np.zeros(1))
    assert env.accumulator == 1
    env.reset(0)
    assert env.accumulator == 0 and env.steps_since_emit == 0


def test_delayed_rejects_bad_period():
    with pytest.raises(ConfigError):
        DelayedReward(PointMass2D(), 0)


@settings(max_examples=50, deadline=None)
@given(rewards=st.lists(st.integers(-100, 100), min_size=1, max_size=80), f=st.integers(1, 25),
       terminal=st.booleans())
def test_delayed_conserves_return(rewards, f, terminal):
    # integer rewards make the sums exact regardless of grouping
    base = emitted(ScriptedEnv(rewards, terminal))
    out = emitted(delayed_wrap(ScriptedEnv(rewards, terminal), f))
    assert sum(out) == sum(base)
    assert all(r == 0 for k, r in enumerate(out[:-1], 1) if k % f)


def test_registry():
    assert isinstance(make_env("pointmass-dense"), PointMass2D)
    assert make_env("pointmass-sparse").sparse
    assert isinstance(make_env("pendulum"), PendulumSwingup)
    env = make_env("delayed:pendulum:7")
    assert isinstance(env, DelayedReward) and env.f_reward == 7
    for bad in ("walker", "delayed:pendulum", "delayed:pendulum:x", "delayed:nope:3"):
        with pytest.raises(ConfigError):
            make_env(bad)


def test_step_result_finished():
    assert StepResult(np.zeros(1), 0.0, True, False).finished
    assert StepResult(np.zeros(1), 0.0, False, True).finished
    assert not StepResult(np.zeros(1), 0.0, False, False).finished


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), f=st.integers(1, 25))
def test_float_rewards_conserved_bitwise(seed, f):
    rng = np.random.default_rng(seed)
    actions = rng.uniform(-1, 1, size=(200, 2))
    base, wrapped = make_env("pointmass-dense"), make_env(f"delayed:pointmass-dense:{f}")
    base.reset(seed), wrapped.reset(seed)
    r_base, r_wrapped = [], []
    for a in actions:
        r_base.append(base.step(a).reward)
        res = wrapped.step(a)
        r_wrapped.append(res.reward)
        if res.finished:
            break
    assert sum(r_base) == sum(r_wrapped)


def test_quantize_reward():
    assert quantize_reward(-1.0) == -1.0 and quantize_reward(0.0) == 0.0
    x = quantize_reward(0.1)
    assert abs(x - 0.1) <= 2.0**-33 and (x * 2**32).is_integer()
