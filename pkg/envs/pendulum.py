"""
Target-angle inverted pendulum

theta = 0 is upright; the task is to hold theta at a target angle alpha.
Dynamics use the 3g/(2l) convention with semi-implicit Euler.
"""

import math
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from envs.errors import DynamicsError


@dataclass
class PendulumConfig:
    g: float = 10.0
    m: float = 1.0
    l: float = 1.0
    dt: float = 0.05
    max_torque: float = 2.0
    max_speed: float = 8.0
    target_angle: float = math.radians(10.0)
    episode_steps: int = 200
    init_angle_range: float = math.pi
    init_speed_range: float = 1.0
    twin_flips_target: bool = True

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.max_torque <= 0:
            raise ValueError("max_torque must be positive")


@dataclass
class PendulumState:
    theta: float
    theta_dot: float
    steps: int = 0


def wrap_angle(x: float) -> float:
    return ((x + math.pi) % (2.0 * math.pi)) - math.pi


def pendulum_reward(cfg: PendulumConfig, theta: float, theta_dot: float, torque: float) -> float:
    error = wrap_angle(theta - cfg.target_angle)
    return math.exp(-(error ** 2 + 0.1 * theta_dot ** 2 + 0.001 * torque ** 2))


def pendulum_step(cfg: PendulumConfig, state: PendulumState, torque: float) -> Tuple[PendulumState, float, bool]:
    """
    Advance one control period

    Args:
        cfg: Plant parameters
        state: Current state
        torque: Requested torque (N*m), clipped to +-max_torque

    Returns:
        (next state, reward in (0, 1], done)
    """
    if not math.isfinite(torque):
        raise DynamicsError(f"Non-finite torque {torque}")
    u = min(max(torque, -cfg.max_torque), cfg.max_torque)
    reward = pendulum_reward(cfg, state.theta, state.theta_dot, u)

    theta_ddot = 3.0 * cfg.g / (2.0 * cfg.l) * math.sin(state.theta) + 3.0 / (cfg.m * cfg.l ** 2) * u
    theta_dot = state.theta_dot + theta_ddot * cfg.dt
    theta_dot = min(max(theta_dot, -cfg.max_speed), cfg.max_speed)
    theta = state.theta + theta_dot * cfg.dt

    if not (math.isfinite(theta) and math.isfinite(theta_dot)):
        raise DynamicsError(f"Pendulum state blew up: theta={theta}, theta_dot={theta_dot}")

    next_state = PendulumState(theta=theta, theta_dot=theta_dot, steps=state.steps + 1)
    return next_state, reward, next_state.steps >= cfg.episode_steps


def pendulum_energy(cfg: PendulumConfig, state: PendulumState) -> float:
    """Kinetic plus potential energy of the uniform rod (pivot reference)"""
    inertia = cfg.m * cfg.l ** 2 / 3.0
    return 0.5 * inertia * state.theta_dot ** 2 + cfg.m * cfg.g * cfg.l / 2.0 * math.cos(state.theta)


class PendulumEnv:
    """Gym-style wrapper; actions in [-1, 1] scale to +-max_torque"""

    action_size = 1
    observation_size = 4

    def __init__(self, cfg: Optional[PendulumConfig] = None):
        self.cfg = cfg or PendulumConfig()
        self.state = PendulumState(0.0, 0.0)

    @property
    def max_episode_steps(self) -> int:
        return self.cfg.episode_steps

    def observe(self) -> np.ndarray:
        s = self.state
        return np.array([math.cos(s.theta), math.sin(s.theta), s.theta_dot, self.cfg.target_angle])

    def reset(self, rng: np.random.Generator, theta: Optional[float] = None, theta_dot: Optional[float] = None) -> np.ndarray:
        if theta is None:
            theta = float(rng.uniform(-self.cfg.init_angle_range, self.cfg.init_angle_range))
        if theta_dot is None:
            theta_dot = float(rng.uniform(-self.cfg.init_speed_range, self.cfg.init_speed_range))
        self.state = PendulumState(theta, theta_dot)
        return self.observe()

    def step(self, action) -> Tuple[np.ndarray, float, bool, Dict]:
        a = float(np.clip(np.asarray(action, dtype=np.float64).reshape(-1)[0], -1.0, 1.0))
        torque = a * self.cfg.max_torque
        self.state, reward, done = pendulum_step(self.cfg, self.state, torque)
        info = {"theta": self.state.theta, "theta_dot": self.state.theta_dot, "torque": torque}
        return self.observe(), reward, done, info
