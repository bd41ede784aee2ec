"""
Ground station

Rebuilds transitions from consecutive observation packets, recomputes the
reward from what the drone reported, fine-tunes the agent and exports
versioned model images. The live critic only sees the live buffer; the
anchor critic only sees the sim buffer.
"""

import math
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np
import structlog

import config
from envs.attitude import AttitudeConfig, attitude_observation, attitude_reward
from nn.serialization import serialize
from rl.agent import AgentBundle, attach_anchor, update_cycle
from rl.buffer import LIVE, SIM, ReplayBuffer, Transition
from rl.objectives import ObjectiveRangeError
from rl.policy import deterministic_action
from rl.trainer import TrainingDiverged, dump_diagnostics
from swaplink.frames import Frame, FrameReader, FrameType
from swaplink.packets import ObsPacket
from swaplink.transfer import ModelImage

logger = structlog.get_logger(__name__)

PROBE_STATES = 256


@dataclass
class AdaptSettings:
    """
    Attributes:
        steps: Adaptation steps
        transitions_per_step: Live transitions collected per step (N)
        updates_per_step: Gradient update cycles per step (K)
        batch_size: Transitions per update
        polyak: Target averaging coefficient
        anchored: Use the anchor critic
        reset_anchor_target: Start the anchor target from the anchor instead of the sim target
        flight_profile: Setpoint profile flown during adaptation
        probe_profile: Setpoint profile of the forgetting probe
        probe_steps: Ticks per probe flight
        eval_steps: Ticks of the before/after evaluation flights
        divergence_factor: Probe MAE growth counted as divergence
        max_policy_drift: Mean probe-state action change per step above which a step is flagged
        live_buffer_size: Live replay capacity
    """

    steps: int = 15
    transitions_per_step: int = 2048
    updates_per_step: int = 500
    batch_size: int = 100
    polyak: float = 0.995
    anchored: bool = True
    reset_anchor_target: bool = False
    flight_profile: str = "small"
    probe_profile: str = "large"
    probe_steps: int = 500
    eval_steps: int = 1000
    divergence_factor: float = 5.0
    max_policy_drift: float = 0.05
    live_buffer_size: int = 100_000


def load_adapt_settings(values, base: Optional[AdaptSettings] = None) -> AdaptSettings:
    return config.build(AdaptSettings, values, "adapt", base=base)


class TransitionAssembler:
    """
    Packets k-1, k, k+1 with consecutive ticks yield the transition of tick k

    A tick gap breaks the chain; nothing is fabricated across it.
    """

    def __init__(self, cfg: AttitudeConfig):
        self.cfg = cfg
        self._history: List[ObsPacket] = []
        self.gaps = 0

    def add(self, packet: ObsPacket) -> Optional[Transition]:
        if self._history and packet.tick != self._history[-1].tick + 1:
            self.gaps += 1
            self._history = []
        self._history.append(packet)
        if len(self._history) < 3:
            return None
        prev, cur, nxt = self._history[-3:]
        self._history = self._history[-2:]
        obs = attitude_observation(self.cfg, cur.setpoint, prev.rate, prev.command)
        next_obs = attitude_observation(self.cfg, nxt.setpoint, cur.rate, cur.command)
        reward, _ = attitude_reward(self.cfg, cur.setpoint, cur.rate, prev.duty, cur.duty)
        return Transition(obs=obs, action=np.asarray(cur.command, dtype=np.float64), reward=reward,
                          next_obs=next_obs, done=False, version=cur.version)


class GroundStation:
    """
    Args:
        bundle: Agent pretrained in simulation
        sim_buffer: Replay data from simulation training
        cfg: Attitude config used to rebuild observations and rewards
        settings: Adaptation schedule
        seed: Seed for sampling and perturbations
        dump_dir: Diagnostic dump location on divergence
    """

    def __init__(self, bundle: AgentBundle, sim_buffer: Optional[ReplayBuffer], cfg: AttitudeConfig,
                 settings: AdaptSettings, seed: int = 0, dump_dir=None):
        if sim_buffer is not None and sim_buffer.role != SIM:
            raise ValueError("The anchor buffer must hold sim data")
        if settings.anchored:
            if sim_buffer is None or len(sim_buffer) == 0:
                raise ValueError("Anchored adaptation needs the sim replay buffer")
            if not bundle.anchored:
                bundle = attach_anchor(bundle, reset_target=settings.reset_anchor_target)
        self.bundle = bundle
        self.sim_buffer = sim_buffer
        self.cfg = cfg
        self.settings = settings
        self.rng = np.random.default_rng(seed)
        self.dump_dir = dump_dir
        self.live_buffer = ReplayBuffer(bundle.policy.input_size, bundle.action_size,
                                        settings.live_buffer_size, LIVE, seed=seed + 1)
        self.assembler = TransitionAssembler(cfg)
        self.reader = FrameReader()
        self.collected = 0
        self.packets = 0
        self.lost_packets = 0
        self._last_seq: Optional[int] = None
        self.probe_states: Optional[np.ndarray] = None
        self.history: List[Dict[str, float]] = []

    def ingest_frame(self, frame: Frame) -> bool:
        """True when the frame completed a transition"""
        if frame.type is not FrameType.OBS:
            return False
        if self._last_seq is not None:
            self.lost_packets += (frame.seq - self._last_seq - 1) & 0xFFFF
        self._last_seq = frame.seq
        try:
            packet = ObsPacket.decode(frame.payload)
        except ValueError as e:
            logger.debug("bad observation payload", error=str(e))
            return False
        self.packets += 1
        transition = self.assembler.add(packet)
        if transition is None:
            return False
        self.live_buffer.add_transition(transition)
        self.bundle.obs_stats.update(transition.obs)
        self.collected += 1
        return True

    def ingest_bytes(self, data: bytes) -> int:
        self.reader.push(data)
        return sum(self.ingest_frame(f) for f in self.reader.pop())

    def train(self, updates: int) -> Dict[str, float]:
        """
        K update cycles on the live buffer (plus the anchor critic on sim data)

        Returns:
            Mean of each logged quantity over the cycles
        """
        if self.probe_states is None and len(self.live_buffer) > 0:
            states = self.live_buffer.all_obs()
            self.probe_states = states[:PROBE_STATES].copy()
        sums: Dict[str, float] = {}
        counts: Dict[str, int] = {}
        for i in range(updates):
            try:
                stats = update_cycle(self.bundle, self.live_buffer, self.sim_buffer if self.settings.anchored else None,
                                     self.settings.batch_size, self.settings.polyak, self.rng)
            except ObjectiveRangeError as e:
                self._diverged(f"objective out of range at update {i}: {e}")
            if not all(math.isfinite(v) for v in stats.values()):
                self._diverged(f"non-finite loss at update {i}: {stats}")
            for key, value in stats.items():
                sums[key] = sums.get(key, 0.0) + value
                counts[key] = counts.get(key, 0) + 1
        return {key: sums[key] / counts[key] for key in sums}

    def _diverged(self, reason: str):
        logger.error("adaptation diverged", reason=reason)
        written = dump_diagnostics(self.bundle, self.history, self.dump_dir, reason) if self.dump_dir else None
        raise TrainingDiverged(reason, written)

    def export(self) -> ModelImage:
        """Image of the current policy under the next version number"""
        return ModelImage(serialize(self.bundle.policy), (self.bundle.version + 1) & 0xFFFF)

    def confirm(self, version: int):
        """Record a version the drone acknowledged"""
        self.bundle.version = version

    def drift_exceeded(self, drift: float) -> bool:
        return drift > self.settings.max_policy_drift

    def policy_drift(self, reference) -> float:
        """Mean absolute action change on the probe states against a reference policy"""
        if self.probe_states is None:
            return 0.0
        stochastic = self.bundle.stochastic
        now = deterministic_action(self.bundle.policy, self.probe_states, stochastic)
        before = deterministic_action(reference, self.probe_states, stochastic)
        return float(np.mean(np.abs(now - before)))
