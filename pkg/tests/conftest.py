import pytest

from p3slab.harness import load_config


def tiny_overrides(scheme="p3s", n=4, steps=800, **extra):
    base = {
        "scheme.name": scheme, "scheme.n_learners": n, "run.total_steps": steps,
        "run.eval_every": 400 if steps % 400 == 0 else steps, "run.eval_episodes": 2,
        "run.checkpoint": "false", "td3.hidden": "8,8", "td3.t_initial": 40, "td3.batch_size": 16,
        "p3s.sync_period": 20, "p3s.distance_batch": 64, "scheme.reset_period": 30,
        "scheme.center_period": 15, "scheme.center_batch": 64, "scheme.center_steps": 3,
    }
    base.update(extra)
    return [f"{k}={v}" for k, v in base.items()]


@pytest.fixture
def tiny_cfg():
    def make(scheme="p3s", n=4, steps=800, **extra):
        return load_config(None, tiny_overrides(scheme, n, steps, **extra))
    return make
