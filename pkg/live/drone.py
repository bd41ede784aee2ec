"""
Simulated drone node

One control step per tick on the real-twin plant: observe, invoke the active
policy, step the plant, offer an observation packet to the uplink, then take
a staged model if one is ready. Swaps only happen between ticks.
"""

import time
from dataclasses import asdict, dataclass, field
from typing import List, Optional

import numpy as np
import pandas as pd
import structlog

from envs.attitude import AttitudeEnv
from envs.errors import DynamicsError
from metrics import EvalTrace
from nn.mlp import Mlp
from rl.policy import deterministic_action
from swaplink.packets import STATUS_DEADLINE_MISS, STATUS_SWAP_ERROR, STATUS_SWAPPED, ObsPacket
from swaplink.swap import SwapBuffer
from swaplink.uplink import ObsUplink

logger = structlog.get_logger(__name__)

CRASH_RATE_DPS = 2000.0


class Crash(RuntimeError):
    """The plant left its flight envelope"""


@dataclass
class TickRecord:
    tick: int
    t: float
    version: int
    target: List[float]
    measured: List[float]
    command: List[float]
    duty: List[float]
    reward: float
    deadline_met: bool = True


@dataclass
class SwapEvent:
    tick: int
    t: float
    old_version: int
    new_version: int
    latency_s: float


@dataclass
class FlightLog:
    records: List[TickRecord] = field(default_factory=list)
    swaps: List[SwapEvent] = field(default_factory=list)
    crashed: bool = False
    error: Optional[str] = None

    def __len__(self) -> int:
        return len(self.records)

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for r in self.records:
            row = {"tick": r.tick, "t": r.t, "version": r.version, "reward": r.reward,
                   "deadline_met": r.deadline_met}
            for name, values in (("target", r.target), ("measured", r.measured),
                                 ("command", r.command), ("duty", r.duty)):
                row.update({f"{name}_{i}": v for i, v in enumerate(values)})
            rows.append(row)
        return pd.DataFrame(rows)

    def swaps_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(s) for s in self.swaps],
                            columns=["tick", "t", "old_version", "new_version", "latency_s"])

    def trace(self, sample_rate: float) -> EvalTrace:
        return EvalTrace(
            setpoints=np.array([r.target for r in self.records]).reshape(-1, 3),
            measured=np.array([r.measured for r in self.records]).reshape(-1, 3),
            duty=np.array([r.duty for r in self.records]).reshape(-1, 4),
            sample_rate=sample_rate,
        )

    def versions(self) -> np.ndarray:
        return np.array([r.version for r in self.records], dtype=np.int64)


class DroneNode:
    """
    Args:
        env: Real-twin attitude plant, already reset
        policy: Initial controller
        version: Initial policy version
        swap: Staging slot filled by the receive side
        uplink: Optional observation uplink (None = no ground station)
        stochastic: Policy is a squashed-Gaussian head (greedy mean is flown)
    """

    def __init__(self, env: AttitudeEnv, policy: Mlp, version: int, swap: SwapBuffer,
                 uplink: Optional[ObsUplink] = None, stochastic: bool = False):
        self.env = env
        self.policy = policy
        self.version = version
        self.swap = swap
        self.uplink = uplink
        self.stochastic = stochastic
        self.tick_count = 0
        self.log = FlightLog()
        self._pending_status = 0

    @property
    def dt(self) -> float:
        return self.env.cfg.dt

    @property
    def clock(self) -> float:
        return self.tick_count * self.dt

    def tick(self, now: Optional[float] = None, deadline_met: bool = True) -> TickRecord:
        """
        One control period

        Raises:
            DynamicsError, Crash: the run must halt
        """
        t = self.clock if now is None else now
        obs = self.env.observe()
        action = np.clip(deterministic_action(self.policy, obs, self.stochastic), -1.0, 1.0)
        _, reward, _, info = self.env.step(action)
        if np.any(np.abs(info["rate_dps"]) > CRASH_RATE_DPS):
            raise Crash(f"Body rate {np.max(np.abs(info['rate_dps'])):.0f} deg/s at tick {self.tick_count}")

        record = TickRecord(
            tick=self.tick_count, t=t, version=self.version,
            target=info["target_dps"].tolist(), measured=info["measured_dps"].tolist(),
            command=action.tolist(), duty=info["duty"].tolist(), reward=float(reward),
            deadline_met=deadline_met,
        )
        self.log.records.append(record)

        if self.uplink is not None:
            status = self._pending_status
            if self.swap.error:
                status |= STATUS_SWAP_ERROR
            if not deadline_met:
                status |= STATUS_DEADLINE_MISS
            self.uplink.offer(ObsPacket(
                timestamp_ms=int(round(t * 1000.0)), tick=self.tick_count,
                setpoint=tuple(record.target), rate=tuple(record.measured),
                command=tuple(record.command), duty=tuple(record.duty),
                version=self.version, status=status,
            ))
            self._pending_status = 0

        self.tick_count += 1
        self.poll_swap(t + self.dt if now is None else time.monotonic())
        return record

    def poll_swap(self, now: float):
        """Take a staged model at a tick boundary"""
        staged = self.swap.take_if_ready()
        if staged is None:
            return
        event = SwapEvent(tick=self.tick_count, t=now, old_version=self.version, new_version=staged.version,
                          latency_s=max(0.0, now - staged.installed_at))
        self.policy = staged.net
        self.version = staged.version
        self.log.swaps.append(event)
        self._pending_status = STATUS_SWAPPED
        logger.info("policy swapped", tick=event.tick, version=event.new_version,
                    latency_ms=round(event.latency_s * 1000.0, 2))


def run_drone(node: DroneNode, duration_s: float) -> FlightLog:
    """
    Fly for duration_s of simulated time

    A plant blow-up is logged and halts the run; the log is returned with
    crashed set.
    """
    ticks = int(round(duration_s / node.dt))
    for _ in range(ticks):
        try:
            node.tick()
        except (DynamicsError, Crash) as e:
            node.log.crashed = True
            node.log.error = str(e)
            logger.error("drone crashed", tick=node.tick_count, error=str(e))
            break
    return node.log
