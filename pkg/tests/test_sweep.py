import math

import numpy as np
import pandas as pd
import pytest

from envs.pendulum import PendulumConfig, PendulumEnv
from rl.objectives import ObjectiveWeights
from rl.sweep import (
    SWEEP_GRIDS,
    apply_sample,
    correlation_report,
    format_correlation,
    hyperparameter_sweep,
    sample_grid,
)
from rl.trainer import TrainConfig


def test_grids_cover_tested_values():
    assert SWEEP_GRIDS["ddpg"]["polyak"] == [0.5, 0.9, 0.95, 0.99, 0.995]
    assert set(SWEEP_GRIDS) == {"ddpg", "ddpgx", "td3", "sac"}


def test_samples_come_from_grid(rng):
    samples = sample_grid(SWEEP_GRIDS["td3"], 20, rng)
    assert len(samples) == 20
    for sample in samples:
        for name, value in sample.items():
            assert value in SWEEP_GRIDS["td3"][name]


def test_empty_grid():
    with pytest.raises(ValueError):
        sample_grid({}, 3, np.random.default_rng(0))


def test_apply_sample_routes_fields():
    cfg, weights = apply_sample({"lr": 1e-3, "gamma": 0.9, "batch_size": 50}, TrainConfig(), ObjectiveWeights())
    assert cfg.pi_lr == cfg.q_lr == 1e-3
    assert cfg.batch_size == 50
    assert weights.gamma == 0.9
    with pytest.raises(ValueError):
        apply_sample({"dropout": 0.1}, TrainConfig(), ObjectiveWeights())


def test_correlation_with_constant_column():
    table = pd.DataFrame({"sample": [0, 1, 2, 3], "seed": 0, "gamma": [0.8, 0.9, 0.95, 0.99],
                          "batch_size": 100, "reward": [0.1, 0.2, 0.3, 0.4], "diverged": False})
    report = correlation_report(table).set_index("parameter")
    assert report.loc["gamma", "r"] == pytest.approx(0.98, abs=0.02)
    assert math.isnan(report.loc["batch_size", "r"])
    text = format_correlation(report.reset_index())
    assert "n/a" in text


def test_correlation_skips_failed_runs():
    table = pd.DataFrame({"polyak": [0.5, 0.9, 0.99], "reward": [0.1, math.nan, 0.3]})
    report = correlation_report(table)
    assert report.loc[0, "n"] == 2


def test_correlation_needs_reward():
    with pytest.raises(KeyError):
        correlation_report(pd.DataFrame({"gamma": [0.9]}))


def test_tiny_sweep():
    base = TrainConfig(total_steps=120, batch_size=16, start_steps=40, update_after=40, update_every=40,
                       hidden=(4,), eval_interval=120, eval_episodes=1, eval_steps=10)
    grid = {"polyak": [0.9, 0.99], "gamma": [0.9, 0.99]}
    table = hyperparameter_sweep("ddpg", grid, lambda: PendulumEnv(PendulumConfig(episode_steps=20)), [0],
                                 n_samples=3, base_cfg=base, eval_episodes=1)
    assert len(table) == 3
    assert {"sample", "seed", "polyak", "gamma", "reward", "diverged"} <= set(table.columns)
    assert table["reward"].notna().all()
