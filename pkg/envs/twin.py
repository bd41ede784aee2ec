"""
Sim-to-real twins and config loading for the plants
"""

import dataclasses
from typing import Mapping, Optional, Union

import numpy as np

import config
from envs.attitude import AttitudeConfig, DomainGap
from envs.pendulum import PendulumConfig


def make_real_twin(cfg: Union[AttitudeConfig, PendulumConfig]) -> Union[AttitudeConfig, PendulumConfig]:
    """
    Perturbed 'real' counterpart of a sim config

    Attitude: inertia and motor lag scaled, gyro noise added, a fixed random
    per-motor duty bias drawn from the gap seed. Pendulum: target angle
    flipped.
    """
    if isinstance(cfg, PendulumConfig):
        if not cfg.twin_flips_target:
            return dataclasses.replace(cfg)
        return dataclasses.replace(cfg, target_angle=-cfg.target_angle)

    if not isinstance(cfg, AttitudeConfig):
        raise TypeError(f"No twin for {type(cfg).__name__}")

    gap = cfg.domain_gap
    bias_rng = np.random.default_rng(gap.seed)
    bias = np.asarray(cfg.motor_bias, dtype=np.float64) + bias_rng.uniform(-1.0, 1.0, size=4) * gap.motor_bias_max
    return dataclasses.replace(
        cfg,
        inertia=tuple(float(i) * gap.inertia_scale for i in cfg.inertia),
        motor_tau=cfg.motor_tau * gap.motor_tau_scale,
        gyro_noise_dps=cfg.gyro_noise_dps + gap.gyro_noise_dps,
        motor_bias=tuple(float(b) for b in bias),
        domain_gap=DomainGap.none(),
    )


def load_attitude_config(values: Mapping[str, str], base: Optional[AttitudeConfig] = None) -> AttitudeConfig:
    return config.build(AttitudeConfig, values, "attitude", base=base)


def load_pendulum_config(values: Mapping[str, str], base: Optional[PendulumConfig] = None) -> PendulumConfig:
    return config.build(PendulumConfig, values, "pendulum", base=base)
