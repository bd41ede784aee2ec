"""
Simplified quadrotor attitude-rate plant

Rigid body only (no translation, no aerodynamics). Four motor commands in
[-1, 1] map affinely to duty in [0, 1]; duty follows a first-order lag;
body torques come from a quad-X mixer around hover duty; body rates follow
Euler's equations integrated with explicit Euler.

Motor order (Betaflight): 1 rear-right, 2 front-right, 3 rear-left, 4 front-left.
"""

from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from envs.errors import DynamicsError
from envs.setpoints import SetpointGenerator

QUAD_X_MIXER = (
    -0.5, -0.5, 0.5, 0.5,   # roll
    -0.5, 0.5, -0.5, 0.5,   # pitch
    0.5, -0.5, -0.5, 0.5,   # yaw
)

REWARD_MODES = ("composite", "tracking")


@dataclass
class DomainGap:
    """Perturbations turning the sim plant into its 'real' twin"""

    inertia_scale: float = 1.2
    motor_tau_scale: float = 2.0
    gyro_noise_dps: float = 0.5
    motor_bias_max: float = 0.05
    seed: int = 7

    @classmethod
    def none(cls) -> "DomainGap":
        return cls(inertia_scale=1.0, motor_tau_scale=1.0, gyro_noise_dps=0.0, motor_bias_max=0.0)

    def is_zero(self) -> bool:
        return (self.inertia_scale == 1.0 and self.motor_tau_scale == 1.0
                and self.gyro_noise_dps == 0.0 and self.motor_bias_max == 0.0)


@dataclass
class AttitudeConfig:
    inertia: Tuple[float, float, float] = (0.007, 0.007, 0.012)
    motor_tau: float = 0.02
    mixer: Tuple[float, ...] = QUAD_X_MIXER
    max_torque: Tuple[float, float, float] = (0.25, 0.25, 0.4)
    hover_duty: float = 0.5
    control_rate_hz: float = 100.0
    setpoint_profile: str = "aggressive"
    hold_range_s: Tuple[float, float] = (0.5, 2.0)
    gyro_noise_dps: float = 0.0
    motor_bias: Tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    track_scale_dps: float = 100.0
    smooth_scale: float = 0.1
    min_duty: float = 0.3
    rate_scale_dps: float = 400.0
    reward_mode: str = "composite"
    episode_steps: int = 1000
    domain_gap: DomainGap = field(default_factory=DomainGap)

    def __post_init__(self):
        if len(self.inertia) != 3 or any(i <= 0 for i in self.inertia):
            raise ValueError(f"Inertia entries must be positive, got {self.inertia}")
        if len(self.mixer) != 12:
            raise ValueError("Mixer must be a 3x4 matrix (12 values, row-major)")
        if self.motor_tau <= 0 or self.control_rate_hz <= 0:
            raise ValueError("motor_tau and control_rate_hz must be positive")
        if self.reward_mode not in REWARD_MODES:
            raise ValueError(f"Unknown reward mode {self.reward_mode!r}")

    @property
    def dt(self) -> float:
        return 1.0 / self.control_rate_hz

    @property
    def mixer_matrix(self) -> np.ndarray:
        return np.asarray(self.mixer, dtype=np.float64).reshape(3, 4)


@dataclass
class AttitudeState:
    omega: np.ndarray                 # body rates, rad/s
    duty: np.ndarray                  # motor duty in [0, 1]
    prev_action: np.ndarray           # last command in [-1, 1]
    measured_dps: np.ndarray          # gyro reading, deg/s
    steps: int = 0

    @classmethod
    def at_rest(cls) -> "AttitudeState":
        return cls(np.zeros(3), np.zeros(4), -np.ones(4), np.zeros(3))


def commands_to_duty(commands) -> np.ndarray:
    return (np.clip(np.asarray(commands, dtype=np.float64), -1.0, 1.0) + 1.0) / 2.0


def attitude_reward(cfg: AttitudeConfig, target_dps, rate_dps, duty_prev, duty) -> Tuple[float, Dict[str, float]]:
    """
    Per-step reward from tracking error and motor duty

    Shared by the plant and the ground station, which only sees gyro
    readings and reported duty.

    Returns:
        (reward in [0, 1], components dict)
    """
    error = np.asarray(target_dps, dtype=np.float64) - np.asarray(rate_dps, dtype=np.float64)
    r_track = float(np.exp(-np.abs(error).sum() / cfg.track_scale_dps))
    delta = np.abs(np.asarray(duty, dtype=np.float64) - np.asarray(duty_prev, dtype=np.float64)).sum()
    r_smooth = float(np.exp(-delta / cfg.smooth_scale))
    r_act = float(np.clip(np.mean(duty) / cfg.min_duty, 0.0, 1.0))
    if cfg.reward_mode == "tracking":
        reward = r_track
    else:
        reward = float(np.cbrt(r_track * r_smooth * r_act))
    return reward, {"r_track": r_track, "r_smooth": r_smooth, "r_act": r_act}


def attitude_step(cfg: AttitudeConfig, state: AttitudeState, commands, target_dps,
                  noise_rng: Optional[np.random.Generator] = None) -> Tuple[AttitudeState, float, Dict[str, float]]:
    """
    Advance one control period

    Args:
        cfg: Plant parameters
        state: Current state
        commands: Four motor commands, clipped to [-1, 1]
        target_dps: Setpoint for this period (deg/s per axis)
        noise_rng: Generator for gyro noise (unused when noise is zero)

    Returns:
        (next state, reward, reward components)
    """
    commands = np.clip(np.asarray(commands, dtype=np.float64).reshape(4), -1.0, 1.0)
    if not np.all(np.isfinite(commands)):
        raise DynamicsError(f"Non-finite motor commands {commands}")

    dt = cfg.dt
    lag = 1.0 - np.exp(-dt / cfg.motor_tau)
    duty = state.duty + lag * (commands_to_duty(commands) - state.duty)
    effective = np.clip(duty + np.asarray(cfg.motor_bias, dtype=np.float64), 0.0, 1.0)

    inertia = np.asarray(cfg.inertia, dtype=np.float64)
    torque = np.asarray(cfg.max_torque, dtype=np.float64) * (cfg.mixer_matrix @ (effective - cfg.hover_duty))
    omega = state.omega
    omega_dot = (torque - np.cross(omega, inertia * omega)) / inertia
    omega = omega + dt * omega_dot

    if not (np.all(np.isfinite(omega)) and np.all(np.isfinite(duty))):
        raise DynamicsError(f"Attitude state blew up: omega={omega}")

    rate_dps = np.degrees(omega)
    measured = rate_dps.copy()
    if cfg.gyro_noise_dps > 0.0:
        rng = noise_rng if noise_rng is not None else np.random.default_rng()
        measured = measured + rng.normal(0.0, cfg.gyro_noise_dps, size=3)

    reward, components = attitude_reward(cfg, target_dps, rate_dps, state.duty, duty)
    next_state = AttitudeState(omega=omega, duty=duty, prev_action=commands, measured_dps=measured,
                               steps=state.steps + 1)
    return next_state, reward, components


def attitude_observation(cfg: AttitudeConfig, target_dps, measured_dps, prev_action) -> np.ndarray:
    """(error, rate, previous action, target); rate terms scaled by rate_scale_dps"""
    target = np.asarray(target_dps, dtype=np.float64)
    measured = np.asarray(measured_dps, dtype=np.float64)
    scale = cfg.rate_scale_dps
    return np.concatenate([(target - measured) / scale, measured / scale,
                           np.asarray(prev_action, dtype=np.float64), target / scale])


class AttitudeEnv:
    """Gym-style wrapper around attitude_step with a setpoint stream"""

    action_size = 4
    observation_size = 13

    def __init__(self, cfg: Optional[AttitudeConfig] = None, profile: Optional[str] = None):
        self.cfg = cfg or AttitudeConfig()
        self.profile = profile or self.cfg.setpoint_profile
        self.state = AttitudeState.at_rest()
        self.target = np.zeros(3)
        self._setpoints: Optional[SetpointGenerator] = None
        self._hold_left = 0.0
        self._noise_rng = np.random.default_rng(0)

    @property
    def max_episode_steps(self) -> int:
        return self.cfg.episode_steps

    def observe(self) -> np.ndarray:
        return attitude_observation(self.cfg, self.target, self.state.measured_dps, self.state.prev_action)

    def _advance_target(self):
        if self._setpoints is None:
            return
        if self._hold_left <= 0.0:
            hold = self._setpoints.next_hold()
            self.target, self._hold_left = hold.target, hold.duration_s
        self._hold_left -= self.cfg.dt

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        self.state = AttitudeState.at_rest()
        self._setpoints = SetpointGenerator(int(rng.integers(2 ** 31)), self.profile, self.cfg.hold_range_s)
        self._noise_rng = np.random.default_rng(int(rng.integers(2 ** 31)))
        self._hold_left = 0.0
        self._advance_target()
        return self.observe()

    def set_target(self, target_dps):
        """Pin the setpoint (disables the generated stream)"""
        self._setpoints = None
        self.target = np.asarray(target_dps, dtype=np.float64)

    def step(self, action) -> Tuple[np.ndarray, float, bool, Dict]:
        prev_duty = self.state.duty
        self.state, reward, components = attitude_step(self.cfg, self.state, action, self.target, self._noise_rng)
        info = dict(components)
        info.update({
            "target_dps": self.target.copy(),
            "rate_dps": np.degrees(self.state.omega),
            "measured_dps": self.state.measured_dps.copy(),
            "duty": self.state.duty.copy(),
            "duty_prev": prev_duty,
        })
        self._advance_target()
        done = self.state.steps >= self.cfg.episode_steps
        return self.observe(), reward, done, info
