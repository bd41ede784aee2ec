"""
Shared pytest fixtures
The repository root is the rootdir, so top-level modules import directly in tests.
"""

import numpy as np
import pytest

from nn.mlp import Mlp, param_count
from rl.agent import make_bundle
from rl.buffer import LIVE, SIM, ReplayBuffer


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def no_swann_env(monkeypatch):
    """Keep developer SWANN_* variables out of config tests"""
    import os
    for key in list(os.environ):
        if key.startswith("SWANN_"):
            monkeypatch.delenv(key)


def fill_buffer(buffer: ReplayBuffer, n: int, rng: np.random.Generator):
    for _ in range(n):
        buffer.add(rng.normal(size=buffer.obs_size), rng.uniform(-1, 1, size=buffer.action_size),
                   float(rng.uniform(0.0, 1.0)), rng.normal(size=buffer.obs_size), False, 1)
    return buffer


def constant_policy(commands, obs_size: int = 13) -> Mlp:
    """Single-layer policy whose output ignores the observation"""
    weights = np.zeros(param_count((obs_size, 4)), dtype=np.float32)
    weights[-4:] = np.arctanh(np.clip(commands, -0.9999, 0.9999))
    return Mlp((obs_size, 4), weights)


@pytest.fixture
def sim_buffer(rng):
    return fill_buffer(ReplayBuffer(4, 1, 500, SIM, seed=1), 300, rng)


@pytest.fixture
def live_buffer(rng):
    return fill_buffer(ReplayBuffer(4, 1, 500, LIVE, seed=2), 300, rng)


@pytest.fixture
def small_bundle(rng):
    """ddpgx agent on the pendulum shape (4 obs, 1 action)"""
    return make_bundle("ddpgx", 4, 1, rng, hidden=(8, 8))


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long Monte-Carlo runs (deselect with -m 'not slow')")
