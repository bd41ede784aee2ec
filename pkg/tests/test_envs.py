import dataclasses
import math

import numpy as np
import pytest

from envs.attitude import (
    AttitudeConfig,
    AttitudeEnv,
    AttitudeState,
    DomainGap,
    attitude_observation,
    attitude_reward,
    attitude_step,
    commands_to_duty,
)
from envs.errors import DynamicsError
from envs.pendulum import PendulumConfig, PendulumEnv, PendulumState, pendulum_energy, pendulum_step, wrap_angle
from envs.setpoints import LARGE_RANGE_DPS, SMALL_LIMIT_DPS, SetpointGenerator, setpoint_generator
from envs.trace_log import PENDULUM_ACTION, PENDULUM_STATE, TrajectoryRecorder
from envs.twin import load_pendulum_config, make_real_twin


@pytest.fixture
def quiet_cfg():
    return AttitudeConfig(domain_gap=DomainGap.none())


# ------------------------------- Attitude plant -------------------------------

def test_commands_map_to_duty():
    assert np.allclose(commands_to_duty([-1, 0, 1, 3]), [0.0, 0.5, 1.0, 1.0])


def test_zero_duty_gives_zero_composite_reward(quiet_cfg):
    reward, parts = attitude_reward(quiet_cfg, np.zeros(3), np.zeros(3), np.zeros(4), np.zeros(4))
    assert reward == 0.0
    assert parts["r_track"] == 1.0
    assert parts["r_smooth"] == 1.0
    assert parts["r_act"] == 0.0


def test_perfect_hover_reward_is_one(quiet_cfg):
    duty = np.full(4, 0.5)
    reward, _ = attitude_reward(quiet_cfg, np.zeros(3), np.zeros(3), duty, duty)
    assert reward == pytest.approx(1.0)


def test_tracking_mode_ignores_smoothness():
    cfg = AttitudeConfig(reward_mode="tracking")
    reward, parts = attitude_reward(cfg, [100.0, 0, 0], np.zeros(3), np.zeros(4), np.ones(4))
    assert reward == pytest.approx(math.exp(-1.0))
    assert parts["r_smooth"] < 1.0


def test_bad_reward_mode_rejected():
    with pytest.raises(ValueError):
        AttitudeConfig(reward_mode="shaped")


def test_symmetric_thrust_does_not_rotate(quiet_cfg):
    state = AttitudeState.at_rest()
    for _ in range(50):
        state, _, _ = attitude_step(quiet_cfg, state, np.zeros(4), np.zeros(3))
    assert np.allclose(state.omega, 0.0)
    assert np.allclose(state.duty, 0.5, atol=1e-3)


def test_left_motors_roll_positive(quiet_cfg):
    state, _, _ = attitude_step(quiet_cfg, AttitudeState.at_rest(), [-1, -1, 1, 1], np.zeros(3))
    assert state.omega[0] > 0
    assert state.omega[1] == pytest.approx(0.0, abs=1e-12)
    assert state.omega[2] == pytest.approx(0.0, abs=1e-12)


def test_duty_follows_first_order_lag(quiet_cfg):
    state, _, _ = attitude_step(quiet_cfg, AttitudeState.at_rest(), np.ones(4), np.zeros(3))
    lag = 1.0 - math.exp(-quiet_cfg.dt / quiet_cfg.motor_tau)
    assert np.allclose(state.duty, lag)


def test_non_finite_commands_raise(quiet_cfg):
    with pytest.raises(DynamicsError):
        attitude_step(quiet_cfg, AttitudeState.at_rest(), [np.nan, 0, 0, 0], np.zeros(3))


def test_observation_layout(quiet_cfg):
    obs = attitude_observation(quiet_cfg, [400.0, 0, 0], [200.0, 0, 0], [0.1, 0.2, 0.3, 0.4])
    assert obs.shape == (13,)
    assert obs[0] == pytest.approx(0.5)
    assert obs[3] == pytest.approx(0.5)
    assert np.allclose(obs[6:10], [0.1, 0.2, 0.3, 0.4])
    assert obs[10] == pytest.approx(1.0)


def test_env_episode_and_info(quiet_cfg, rng):
    cfg = dataclasses.replace(quiet_cfg, episode_steps=20)
    env = AttitudeEnv(cfg, "hover")
    obs = env.reset(rng)
    assert obs.shape == (AttitudeEnv.observation_size,)
    done = False
    steps = 0
    while not done:
        obs, reward, done, info = env.step(np.zeros(4))
        steps += 1
        assert 0.0 <= reward <= 1.0
    assert steps == 20
    assert set(info) >= {"target_dps", "rate_dps", "measured_dps", "duty", "duty_prev"}


def test_env_reward_matches_reward_function(quiet_cfg, rng):
    env = AttitudeEnv(quiet_cfg, "small")
    env.reset(rng)
    _, reward, _, info = env.step([0.2, -0.1, 0.4, 0.0])
    expected, _ = attitude_reward(quiet_cfg, info["target_dps"], info["rate_dps"], info["duty_prev"], info["duty"])
    assert reward == expected


def test_pinned_target(quiet_cfg, rng):
    env = AttitudeEnv(quiet_cfg)
    env.reset(rng)
    env.set_target([30.0, 0.0, 0.0])
    for _ in range(300):
        _, _, _, info = env.step(np.zeros(4))
    assert np.allclose(info["target_dps"], [30.0, 0.0, 0.0])


# ------------------------------- Setpoints -------------------------------

def test_setpoints_deterministic_per_seed():
    a = SetpointGenerator(3, "small").targets(500, 0.01)
    b = SetpointGenerator(3, "small").targets(500, 0.01)
    c = SetpointGenerator(4, "small").targets(500, 0.01)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_profile_ranges():
    hover = SetpointGenerator(0, "hover").targets(200, 0.01)
    assert not hover.any()
    aggressive = SetpointGenerator(0, "aggressive").targets(2000, 0.01)
    assert np.abs(aggressive).max() <= 400.0
    large = np.abs(SetpointGenerator(0, "large").targets(2000, 0.01))
    assert large.min() >= LARGE_RANGE_DPS[0]
    assert large.max() <= LARGE_RANGE_DPS[1]
    small = np.abs(SetpointGenerator(0, "small").targets(5000, 0.01))
    assert small.max() <= LARGE_RANGE_DPS[1]


def test_small_profile_large_fraction():
    gen = SetpointGenerator(11, "small")
    targets = np.array([gen.next_hold().target for _ in range(10_000)])
    fraction = float(np.mean(np.abs(targets) > 100.0))
    assert fraction == pytest.approx(0.1, abs=0.02)
    assert np.mean(np.abs(targets) < SMALL_LIMIT_DPS) == pytest.approx(0.9, abs=0.02)


def test_holds_last_at_least_minimum():
    targets = SetpointGenerator(11, "aggressive", hold_range_s=(0.5, 2.0)).targets(400, 0.01)
    changes = np.flatnonzero(np.any(np.diff(targets, axis=0) != 0, axis=1)) + 1
    edges = np.concatenate([[0], changes])
    assert np.all(np.diff(edges) >= 50)


def test_generator_stream():
    holds = setpoint_generator(5, "large")
    first = next(holds)
    assert first.target.shape == (3,)
    assert 0.5 <= first.duration_s <= 2.0


def test_unknown_profile():
    with pytest.raises(ValueError):
        SetpointGenerator(0, "acro")


# ------------------------------- Pendulum -------------------------------

def test_wrap_angle():
    assert wrap_angle(1.5 * math.pi) == pytest.approx(-0.5 * math.pi)
    assert wrap_angle(0.25) == pytest.approx(0.25)


def test_upright_rest_is_equilibrium():
    cfg = PendulumConfig()
    state = PendulumState(0.0, 0.0)
    for _ in range(100):
        state, _, _ = pendulum_step(cfg, state, 0.0)
    assert state.theta == 0.0
    assert state.theta_dot == 0.0


def test_energy_conserved_without_torque():
    cfg = PendulumConfig(dt=0.001, max_speed=100.0, episode_steps=10 ** 6)
    state = PendulumState(0.5, 0.0)
    start = pendulum_energy(cfg, state)
    for _ in range(3000):
        state, _, _ = pendulum_step(cfg, state, 0.0)
    assert pendulum_energy(cfg, state) == pytest.approx(start, rel=1e-2)


def test_reward_peaks_at_target():
    cfg = PendulumConfig()
    _, at_target, _ = pendulum_step(cfg, PendulumState(cfg.target_angle, 0.0), 0.0)
    _, away, _ = pendulum_step(cfg, PendulumState(-cfg.target_angle, 0.0), 0.0)
    assert at_target == pytest.approx(1.0)
    assert away < at_target


def test_torque_clipped_and_nan_rejected():
    cfg = PendulumConfig()
    a, _, _ = pendulum_step(cfg, PendulumState(0.0, 0.0), 100.0)
    b, _, _ = pendulum_step(cfg, PendulumState(0.0, 0.0), cfg.max_torque)
    assert a.theta_dot == b.theta_dot
    with pytest.raises(DynamicsError):
        pendulum_step(cfg, PendulumState(0.0, 0.0), float("nan"))


def test_pendulum_env_observation(rng):
    env = PendulumEnv(PendulumConfig(episode_steps=5))
    obs = env.reset(rng, theta=0.3, theta_dot=0.0)
    assert obs == pytest.approx([math.cos(0.3), math.sin(0.3), 0.0, math.radians(10.0)])
    for _ in range(4):
        _, _, done, info = env.step([0.5])
        assert not done
    _, _, done, info = env.step([0.5])
    assert done
    assert info["torque"] == pytest.approx(1.0)


# ------------------------------- Twins -------------------------------

def test_pendulum_twin_flips_target():
    cfg = PendulumConfig()
    assert make_real_twin(cfg).target_angle == -cfg.target_angle
    assert make_real_twin(dataclasses.replace(cfg, twin_flips_target=False)).target_angle == cfg.target_angle


def test_attitude_twin_applies_gap():
    cfg = AttitudeConfig()
    twin = make_real_twin(cfg)
    assert twin.inertia == pytest.approx(tuple(i * 1.2 for i in cfg.inertia))
    assert twin.motor_tau == pytest.approx(cfg.motor_tau * 2.0)
    assert twin.gyro_noise_dps == pytest.approx(0.5)
    assert all(abs(b) <= 0.05 for b in twin.motor_bias)
    assert twin.domain_gap.is_zero()
    assert make_real_twin(cfg) == twin


def test_zero_gap_twin_is_identity(quiet_cfg):
    assert make_real_twin(quiet_cfg) == quiet_cfg


def test_twin_of_unknown_config():
    with pytest.raises(TypeError):
        make_real_twin(object())


def test_load_pendulum_config():
    cfg = load_pendulum_config({"pendulum.dt": "0.02", "pendulum.twin_flips_target": "false"})
    assert cfg.dt == 0.02
    assert cfg.twin_flips_target is False


# ------------------------------- Trajectory logs -------------------------------

def test_trajectory_csv(tmp_path):
    recorder = TrajectoryRecorder(PENDULUM_STATE, PENDULUM_ACTION)
    recorder.record(0.0, (0.1, 0.0), 0.5, {"reward": 0.9})
    recorder.record(0.05, (0.12, 0.4), -0.5, {"reward": 0.8})
    path = recorder.write_csv(tmp_path / "traces" / "run.csv")
    text = path.read_text().splitlines()
    assert text[0] == "t,theta,theta_dot,torque,reward"
    assert len(text) == 3


def test_trajectory_rejects_wrong_width():
    recorder = TrajectoryRecorder(PENDULUM_STATE, PENDULUM_ACTION)
    with pytest.raises(ValueError):
        recorder.record(0.0, (0.1, 0.0, 3.0), 0.5)
