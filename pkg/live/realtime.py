"""
Threaded real-time drone node and the swap timing harness

Three threads on the drone side: the fixed-rate control loop, the receive
loop feeding the model receiver, and the uplink sender draining the
observation queue. Only the receive and uplink threads touch the
transport; they share one write lock. The control loop never blocks on I/O.
"""

import dataclasses
import threading
import time
from typing import Dict, List, Optional

import numpy as np
import structlog
from scipy import stats

from envs.attitude import AttitudeConfig, AttitudeEnv
from envs.errors import DynamicsError
from envs.twin import make_real_twin
from nn.mlp import Mlp
from nn.serialization import serialize
from swaplink.channel import LinkSettings
from swaplink.swap import SwapBuffer
from swaplink.transfer import ModelImage, ModelReceiver, TransportLink, send_model
from swaplink.transports import MemoryTransport
from swaplink.uplink import ObsUplink
from live.drone import Crash, DroneNode, FlightLog

logger = structlog.get_logger(__name__)


class RealtimeDrone:
    """
    Args:
        node: Drone node; its uplink (if any) is drained by a sender thread
        transport: Drone end of a byte-stream transport
        settings: Link settings for the model receiver
    """

    def __init__(self, node: DroneNode, transport, settings: Optional[LinkSettings] = None):
        self.node = node
        self.transport = transport
        self.settings = settings or LinkSettings()
        self.receiver = ModelReceiver(self.settings)
        self.period = node.dt
        self.ack_times: Dict[int, float] = {}
        self.tick_starts: List[float] = []
        self._write_lock = threading.Lock()
        self._stop = threading.Event()
        self._threads: List[threading.Thread] = []

    def start(self):
        targets = [self._control_loop, self._receive_loop]
        if self.node.uplink is not None:
            targets.append(self._uplink_loop)
        self._threads = [threading.Thread(target=t, name=t.__name__.strip("_"), daemon=True) for t in targets]
        for thread in self._threads:
            thread.start()

    def stop(self) -> FlightLog:
        self._stop.set()
        for thread in self._threads:
            thread.join(timeout=2.0)
        return self.node.log

    def __enter__(self) -> "RealtimeDrone":
        self.start()
        return self

    def __exit__(self, *exc):
        self.stop()

    @property
    def running(self) -> bool:
        return not self._stop.is_set()

    def _control_loop(self):
        start = time.monotonic()
        k = 0
        while not self._stop.is_set():
            scheduled = start + k * self.period
            now = time.monotonic()
            if now < scheduled:
                time.sleep(scheduled - now)
                now = time.monotonic()
            self.tick_starts.append(now)
            try:
                self.node.tick(now=now, deadline_met=now - scheduled < self.period)
            except (DynamicsError, Crash) as e:
                self.node.log.crashed = True
                self.node.log.error = str(e)
                logger.error("drone crashed", tick=self.node.tick_count, error=str(e))
                self._stop.set()
                return
            k += 1
            # overrun: skip missed slots instead of bursting to catch up
            behind = int((time.monotonic() - start) / self.period) - k
            if behind > 0:
                k += behind

    def _receive_loop(self):
        while not self._stop.is_set():
            try:
                chunk = self.transport.read(4096, 0.01)
            except ConnectionError as e:
                # keep flying on the current policy
                logger.warning("ground link lost", error=str(e))
                return
            now = time.monotonic()
            if not chunk:
                self.receiver.poll(now)
                continue
            previous = self.receiver.completed
            responses = self.receiver.feed(chunk, now)
            try:
                with self._write_lock:
                    for response in responses:
                        self.transport.write(response)
            except ConnectionError as e:
                logger.warning("ground link lost", error=str(e))
                return
            image = self.receiver.completed
            if image is not None and image is not previous:
                # COMMIT_ACK is on the wire before the image can be taken
                self.ack_times[image.version] = time.monotonic()
                self.node.swap.install(image)

    def _uplink_loop(self):
        while not self._stop.is_set():
            frame = self.node.uplink.get(timeout=0.01)
            if frame is None:
                continue
            try:
                with self._write_lock:
                    self.transport.write(frame)
            except ConnectionError as e:
                logger.warning("uplink lost", error=str(e))
                return


def check_versions(log: FlightLog, ack_times: Dict[int, float]) -> List[str]:
    """
    Atomicity and causality of the swaps in a flight log

    Returns:
        Violations; empty when every version change sits on a swap event at a
        tick boundary and each new version first acts after its COMMIT_ACK
    """
    problems = []
    swaps_by_tick = {s.tick: s for s in log.swaps}
    records = log.records
    for prev, cur in zip(records, records[1:]):
        if cur.tick != prev.tick + 1:
            problems.append(f"tick {cur.tick} follows {prev.tick}")
        if cur.version == prev.version:
            continue
        swap = swaps_by_tick.get(cur.tick)
        if swap is None or swap.old_version != prev.version or swap.new_version != cur.version:
            problems.append(f"version {prev.version}->{cur.version} at tick {cur.tick} without a swap event")
        acked = ack_times.get(cur.version)
        if acked is not None and cur.t <= acked:
            problems.append(f"version {cur.version} acted at {cur.t:.6f} before its COMMIT_ACK at {acked:.6f}")
    return problems


def interval_report(quiet: np.ndarray, busy: np.ndarray, period: float) -> Dict[str, float]:
    """Two-sample KS test and worst deviation (in ticks) of tick intervals"""
    out = {"quiet_ticks": int(len(quiet)), "busy_ticks": int(len(busy)),
           "ks_statistic": float("nan"), "ks_pvalue": float("nan"), "max_deviation_ticks": float("nan")}
    if len(quiet) < 2 or len(busy) < 2:
        return out
    result = stats.ks_2samp(quiet, busy)
    out["ks_statistic"] = float(result.statistic)
    out["ks_pvalue"] = float(result.pvalue)
    out["max_deviation_ticks"] = float(np.max(np.abs(busy - period)) / period)
    out["quiet_mean_s"] = float(np.mean(quiet))
    out["busy_mean_s"] = float(np.mean(busy))
    return out


def swap_timing_harness(policy: Mlp, cfg: Optional[AttitudeConfig] = None, rate_hz: float = 500.0,
                        quiet_s: float = 2.0, transfers: int = 3, settings: Optional[LinkSettings] = None,
                        seed: int = 0, stochastic: bool = False) -> Dict:
    """
    Fly a threaded drone, then push model images at it while it flies

    Tick intervals before and during the transfers are compared and every
    logged tick is checked for a single consistent policy version.

    Returns:
        Dict with success, errors, interval statistics, transfer reports and swap latencies
    """
    settings = settings or LinkSettings()
    cfg = dataclasses.replace(make_real_twin(cfg or AttitudeConfig()), control_rate_hz=rate_hz)
    env = AttitudeEnv(cfg, "small")
    env.reset(np.random.default_rng(seed))
    drone_end, ground_end = MemoryTransport.pair()
    uplink = ObsUplink(rate_hz, settings.obs_rate_hz, settings.byte_rate)
    node = DroneNode(env, policy.copy(), 1, SwapBuffer(policy.input_size, policy.output_size),
                     uplink=uplink, stochastic=stochastic)
    obs_frames = []
    link = TransportLink(ground_end, settings, on_obs=obs_frames.append)
    errors: List[str] = []
    reports = []

    drone = RealtimeDrone(node, drone_end, settings)
    drone.start()
    quiet_until = time.monotonic() + quiet_s
    while time.monotonic() < quiet_until and drone.running:
        link.drain(0.01)
    busy_from = time.monotonic()
    data = serialize(policy)
    for i in range(transfers):
        if not drone.running:
            break
        report = send_model(ModelImage(data, 2 + i), link, settings)
        reports.append(report.to_dict())
        errors.extend(report.errors)
    busy_until = time.monotonic()
    # let the last staged model land on a tick boundary
    settle_until = busy_until + 10 * node.dt
    while time.monotonic() < settle_until:
        link.drain(0.01)
    log = drone.stop()

    starts = np.asarray(drone.tick_starts)
    intervals = np.diff(starts)
    mids = starts[1:]
    quiet = intervals[mids < busy_from]
    busy = intervals[(mids >= busy_from) & (mids <= busy_until)]
    report = interval_report(quiet, busy, node.dt)
    violations = check_versions(log, drone.ack_times)
    if log.crashed:
        errors.append(f"drone crashed: {log.error}")
    errors.extend(violations)
    if report["max_deviation_ticks"] >= 1.0:
        errors.append(f"tick interval deviated by {report['max_deviation_ticks']:.2f} ticks during transfer")
    logger.info("swap timing", ticks=len(log), swaps=len(log.swaps), ks_pvalue=report["ks_pvalue"],
                max_deviation_ticks=report["max_deviation_ticks"])
    return {
        "success": not errors,
        "errors": errors,
        "rate_hz": rate_hz,
        "ticks": len(log),
        "missed_deadlines": sum(1 for r in log.records if not r.deadline_met),
        "obs_frames": len(obs_frames),
        "versions_ok": not violations,
        "final_version": node.version,
        "swap_latency_ms": [s.latency_s * 1000.0 for s in log.swaps],
        "transfers": reports,
        **report,
    }


def run_realtime(node: DroneNode, transport, duration_s: float, settings: Optional[LinkSettings] = None) -> FlightLog:
    """Fly a threaded node against a remote ground station for duration_s of wall time"""
    deadline = time.monotonic() + duration_s
    with RealtimeDrone(node, transport, settings) as drone:
        while drone.running and time.monotonic() < deadline:
            time.sleep(0.05)
    return node.log
