import dataclasses
import json
import math

import pytest

import rl.trainer as trainer
from envs.attitude import AttitudeConfig, AttitudeEnv, DomainGap
from envs.pendulum import PendulumEnv
from envs.twin import make_real_twin
from rl.buffer import LIVE, SIM
from rl.objectives import AnchorDataError, ObjectiveRangeError
from rl.trainer import METRIC_COLUMNS, TrainConfig, TrainingDiverged, evaluate, rollout, train


@pytest.fixture
def tiny_cfg():
    return TrainConfig(total_steps=300, batch_size=32, start_steps=100, update_after=100, update_every=50,
                       hidden=(8, 8), eval_interval=150, eval_episodes=1, eval_steps=20)


def test_fresh_training_run(tiny_cfg):
    seen = []
    result = train("ddpgx", False, PendulumEnv(), tiny_cfg, seed=0, on_eval=lambda t, b, row: seen.append(t))
    assert seen == [150, 300]
    assert list(result.metrics.columns) == list(METRIC_COLUMNS)
    assert result.metrics["step"].tolist() == [150, 300]
    assert result.metrics["eval_reward"].between(0.0, 1.0).all()
    assert result.buffer.role == SIM
    assert len(result.buffer) == 300
    assert result.bundle.updates > 0


def test_training_is_deterministic(tiny_cfg):
    a = train("ddpg", False, PendulumEnv(), tiny_cfg, seed=3)
    b = train("ddpg", False, PendulumEnv(), tiny_cfg, seed=3)
    assert a.bundle.policy == b.bundle.policy


def test_anchored_fine_tune(tiny_cfg):
    pre = train("ddpgx", False, PendulumEnv(), tiny_cfg, seed=0)
    twin = PendulumEnv(make_real_twin(PendulumEnv().cfg))
    cfg = dataclasses.replace(tiny_cfg, start_steps=0, update_after=50)
    tuned = train("ddpgx", True, twin, cfg, seed=1, bundle=pre.bundle, sim_buffer=pre.buffer)
    assert tuned.bundle.anchored
    assert tuned.buffer.role == LIVE
    assert tuned.metrics["q_anchor"].notna().all()


def test_anchored_needs_sim_buffer(tiny_cfg):
    with pytest.raises(AnchorDataError):
        train("ddpgx", True, PendulumEnv(), tiny_cfg, seed=0)


def test_bundle_algo_must_match(tiny_cfg):
    pre = train("ddpg", False, PendulumEnv(), tiny_cfg, seed=0)
    with pytest.raises(ValueError):
        train("td3", False, PendulumEnv(), tiny_cfg, seed=0, bundle=pre.bundle)


def test_divergence_writes_dump(tiny_cfg, tmp_path, monkeypatch):
    def explode(*args, **kwargs):
        raise ObjectiveRangeError("J factor outside (0, 1]")

    monkeypatch.setattr(trainer, "update_cycle", explode)
    with pytest.raises(TrainingDiverged) as info:
        train("ddpgx", False, PendulumEnv(), tiny_cfg, seed=0, dump_dir=tmp_path / "dump")
    assert info.value.dump_dir == tmp_path / "dump"
    report = json.loads((tmp_path / "dump" / "diagnostics.json").read_text())
    assert "objective out of range" in report["reason"]
    assert (tmp_path / "dump" / "policy.swnn").exists()


def test_non_finite_loss_diverges(tiny_cfg, monkeypatch):
    monkeypatch.setattr(trainer, "update_cycle", lambda *a, **k: {"critic_loss": math.nan})
    with pytest.raises(TrainingDiverged):
        train("ddpg", False, PendulumEnv(), tiny_cfg, seed=0)


def test_attitude_evaluation_reports_flight_metrics(tiny_cfg, rng):
    cfg = AttitudeConfig(domain_gap=DomainGap.none(), episode_steps=50)
    result = train("ddpgx", False, AttitudeEnv(cfg, "small"), tiny_cfg, seed=0)
    scores = evaluate(result.bundle, AttitudeEnv(cfg, "small"), 2, rng)
    assert set(scores) == {"eval_reward", "r_track", "r_smooth", "r_act", "mae", "sm", "power"}
    assert all(math.isfinite(v) for v in scores.values())
    for key in ("r_track", "r_smooth", "r_act"):
        assert 0.0 <= scores[key] <= 1.0


def test_pendulum_evaluation_has_no_reward_parts(small_bundle, rng):
    scores = evaluate(small_bundle, PendulumEnv(), 1, rng, steps=50)
    assert math.isfinite(scores["eval_reward"])
    assert math.isnan(scores["r_track"])
    assert math.isnan(scores["mae"])


def test_rollout_fixed_steps(small_bundle, rng):
    run = rollout(small_bundle, PendulumEnv(), rng, steps=500)
    assert len(run.rewards) == 500
    assert run.actions.shape == (500, 1)
    assert run.trace(20.0) is None


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(polyak=1.5)
    with pytest.raises(ValueError):
        TrainConfig(total_steps=0)
