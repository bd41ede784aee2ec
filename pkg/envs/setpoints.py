"""
Setpoint profiles for the attitude plant

Targets are piecewise constant angular velocities (deg/s) per axis, each
held for a uniformly drawn 0.5-2 s.

Profiles:
    small       live flight: |target| < 50 deg/s w.p. 0.9, 100-150 deg/s w.p. 0.1
    aggressive  sim training: uniform in +-400 deg/s
    large       probe suite: 100-150 deg/s, random sign
    hover       all zero
"""

from dataclasses import dataclass
from typing import Iterator, Tuple

import numpy as np

PROFILES = ("small", "aggressive", "large", "hover")

SMALL_LIMIT_DPS = 50.0
LARGE_RANGE_DPS = (100.0, 150.0)
LARGE_PROBABILITY = 0.1
AGGRESSIVE_LIMIT_DPS = 400.0


@dataclass(frozen=True)
class Hold:
    target: np.ndarray
    duration_s: float


class SetpointGenerator:
    """Deterministic per (seed, profile) stream of holds"""

    def __init__(self, seed: int, profile: str = "small", hold_range_s: Tuple[float, float] = (0.5, 2.0)):
        if profile not in PROFILES:
            raise ValueError(f"Unknown setpoint profile {profile!r}, expected one of {PROFILES}")
        self.profile = profile
        self.hold_range_s = hold_range_s
        self.rng = np.random.default_rng(seed)

    def _large(self, size: int) -> np.ndarray:
        signs = self.rng.choice([-1.0, 1.0], size=size)
        return signs * self.rng.uniform(*LARGE_RANGE_DPS, size=size)

    def sample_target(self) -> np.ndarray:
        if self.profile == "hover":
            return np.zeros(3)
        if self.profile == "aggressive":
            return self.rng.uniform(-AGGRESSIVE_LIMIT_DPS, AGGRESSIVE_LIMIT_DPS, size=3)
        if self.profile == "large":
            return self._large(3)
        small = self.rng.uniform(-SMALL_LIMIT_DPS, SMALL_LIMIT_DPS, size=3)
        large = self._large(3)
        pick_large = self.rng.random(3) < LARGE_PROBABILITY
        return np.where(pick_large, large, small)

    def next_hold(self) -> Hold:
        target = self.sample_target()
        return Hold(target=target, duration_s=float(self.rng.uniform(*self.hold_range_s)))

    def holds(self) -> Iterator[Hold]:
        while True:
            yield self.next_hold()

    def targets(self, n_steps: int, dt: float) -> np.ndarray:
        """(n_steps, 3) target array sampled at the control period"""
        out = np.empty((n_steps, 3))
        remaining = 0.0
        target = np.zeros(3)
        for step in range(n_steps):
            if remaining <= 0.0:
                hold = self.next_hold()
                target, remaining = hold.target, hold.duration_s
            out[step] = target
            remaining -= dt
        return out


def setpoint_generator(seed: int, profile: str = "small") -> Iterator[Hold]:
    """Infinite stream of holds for a profile"""
    return SetpointGenerator(seed, profile).holds()
