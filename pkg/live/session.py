"""
Live adaptation session

Lockstep run of a drone node and a ground station over two simulated
channels. The drone clock drives everything: observations are ferried up
once per tick, model transfers run on the downlink channel starting at the
current drone time, and the drone keeps flying on its old policy until the
simulated commit time has passed.
"""

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import structlog

from envs.attitude import AttitudeConfig, AttitudeEnv
from envs.errors import DynamicsError
from envs.twin import make_real_twin
from metrics import high_band_amplitude, spectrum_frame, summarize
from nn.mlp import Mlp
from rl.agent import AgentBundle
from rl.buffer import ReplayBuffer
from rl.trainer import TrainingDiverged
from swaplink.channel import ChannelSim, LinkSettings
from swaplink.swap import SwapBuffer
from swaplink.transfer import ModelImage, ModelReceiver, SimulatedLink, TransferReport, send_model
from swaplink.uplink import ObsUplink
from live.drone import Crash, DroneNode, FlightLog, run_drone
from live.ground import AdaptSettings, GroundStation

logger = structlog.get_logger(__name__)

ADAPTATION_COLUMNS = ("step", "version", "transitions", "lost_packets", "mae", "sm", "power", "probe_mae",
                      "policy_drift", "mean_j", "q", "q_anchor", "f_t", "f_s", "f_a", "critic_loss",
                      "transfer_ok", "transfer_s", "retransmissions", "swap_latency_s")
REPORT_METRICS = ("mae", "sm", "power")


@dataclass
class AdaptationLog:
    rows: List[Dict[str, float]] = field(default_factory=list)
    probe_baseline: float = math.nan
    success: bool = True
    crashed: bool = False
    diverged: bool = False
    errors: List[str] = field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=list(ADAPTATION_COLUMNS))

    @property
    def probe_max(self) -> float:
        values = [r["probe_mae"] for r in self.rows if not math.isnan(r["probe_mae"])]
        return max(values) if values else math.nan


def probe_flight(policy: Mlp, cfg: AttitudeConfig, profile: str, steps: int, seed: int,
                 stochastic: bool = False) -> Tuple[Dict[str, float], FlightLog]:
    """
    Fly a policy without a ground station on a fixed setpoint stream

    A crash yields an infinite MAE.
    """
    env = AttitudeEnv(cfg, profile)
    env.reset(np.random.default_rng(seed))
    node = DroneNode(env, policy, 0, SwapBuffer(policy.input_size, policy.output_size), stochastic=stochastic)
    log = run_drone(node, steps * node.dt)
    if log.crashed or len(log) == 0:
        return {"mae": math.inf, "sm": math.nan, "power": math.nan, "crashed": True}, log
    return {**summarize(log.trace(cfg.control_rate_hz)), "crashed": False}, log


class LiveSession:
    """
    Args:
        node: Drone with an uplink attached
        station: Ground station holding the agent being adapted
        link: Link and protocol settings
        uplink_channel: Drone-to-ground loss model
        downlink_channel: Ground-to-drone channel used for model transfers
        probe_cfg: Plant config for the large-setpoint probe flights (node's config when None)
        probe_seed: Setpoint seed shared by every probe flight
    """

    def __init__(self, node: DroneNode, station: GroundStation, link: Optional[LinkSettings] = None,
                 uplink_channel: Optional[ChannelSim] = None, downlink_channel: Optional[ChannelSim] = None,
                 probe_cfg: Optional[AttitudeConfig] = None, probe_seed: int = 0):
        if node.uplink is None:
            raise ValueError("The drone needs an observation uplink")
        self.node = node
        self.station = station
        self.link = link or LinkSettings()
        self.uplink_channel = uplink_channel or ChannelSim.from_settings(self.link)
        self.downlink_channel = downlink_channel or ChannelSim.from_settings(self.link)
        self.probe_cfg = probe_cfg or node.env.cfg
        self.probe_seed = probe_seed
        self.receiver = ModelReceiver(self.link)
        self.reports: List[TransferReport] = []
        if node.uplink.decimation > 1:
            logger.warning("uplink decimates observations; no transitions can be rebuilt",
                           decimation=node.uplink.decimation)

    def fly(self, ticks: int):
        """Tick the drone and ferry whatever the uplink line can carry"""
        for _ in range(ticks):
            self.node.tick()
            for data in self.node.uplink.pump(self.node.dt):
                delivered = self.uplink_channel.mangle(data)
                if delivered is not None:
                    self.station.ingest_bytes(delivered)

    def collect(self, transitions: int, max_ticks: Optional[int] = None) -> int:
        """Fly until the station has rebuilt `transitions` new transitions"""
        start = self.station.collected
        limit = max_ticks if max_ticks is not None else 4 * transitions + 16
        for _ in range(limit):
            if self.station.collected - start >= transitions:
                break
            self.fly(1)
        return self.station.collected - start

    def deliver(self, image: ModelImage) -> TransferReport:
        """
        Send an image while the drone keeps flying

        The image is staged only after the drone clock reaches the commit
        time, so the new version acts strictly after COMMIT_ACK.
        """
        self.downlink_channel.clock = max(self.downlink_channel.clock, self.node.clock)
        report = send_model(image, SimulatedLink(self.downlink_channel, self.receiver), self.link)
        self.reports.append(report)
        flight_end = report.commit_time if report.success else self.downlink_channel.clock
        while self.node.clock < flight_end:
            self.fly(1)
        if report.success:
            self.station.confirm(image.version)
            self.node.swap.install(self.receiver.completed, now=report.commit_time)
        return report

    def probe(self) -> float:
        stats, _ = probe_flight(self.station.bundle.policy, self.probe_cfg, self.station.settings.probe_profile,
                                self.station.settings.probe_steps, self.probe_seed, self.station.bundle.stochastic)
        return stats["mae"]

    def step(self, index: int) -> Dict[str, float]:
        """Collect, train, evaluate, ship"""
        settings = self.station.settings
        first_record = len(self.node.log)
        lost_before = self.station.lost_packets
        collected = self.collect(settings.transitions_per_step)
        reference = self.station.bundle.policy.copy()
        stats = self.station.train(settings.updates_per_step) if len(self.station.live_buffer) >= settings.batch_size else {}

        window = FlightLog(records=self.node.log.records[first_record:])
        flown = summarize(window.trace(self.node.env.cfg.control_rate_hz)) if len(window) else {}
        swaps_before = len(self.node.log.swaps)
        report = self.deliver(self.station.export())
        # the swap lands at the first tick boundary after install
        if report.success:
            self.fly(1)
        new_swaps = self.node.log.swaps[swaps_before:]
        drift = self.station.policy_drift(reference)
        if self.station.drift_exceeded(drift):
            logger.warning("policy drift above bound", step=index, drift=round(drift, 4),
                           bound=self.station.settings.max_policy_drift)

        row = {
            "step": index,
            "version": self.node.version,
            "transitions": collected,
            "lost_packets": self.station.lost_packets - lost_before,
            "mae": flown.get("mae", math.nan),
            "sm": flown.get("sm", math.nan),
            "power": flown.get("power", math.nan),
            "probe_mae": self.probe(),
            "policy_drift": drift,
            "mean_j": stats.get("j", math.nan),
            "q": stats.get("q", math.nan),
            "q_anchor": stats.get("q_anchor", math.nan),
            "f_t": stats.get("f_t", math.nan),
            "f_s": stats.get("f_s", math.nan),
            "f_a": stats.get("f_a", math.nan),
            "critic_loss": stats.get("critic_loss", math.nan),
            "transfer_ok": report.success,
            "transfer_s": report.elapsed_s,
            "retransmissions": report.retransmissions,
            "swap_latency_s": new_swaps[-1].latency_s if new_swaps else math.nan,
        }
        self.station.history.append(row)
        logger.info("adaptation step", step=index, version=row["version"], mae=round(row["mae"], 3),
                    probe_mae=round(row["probe_mae"], 3), transfer_ok=report.success)
        return row


def run_ground_station(session: LiveSession, steps: Optional[int] = None) -> AdaptationLog:
    """
    Run adaptation steps until the schedule ends, the drone crashes or learning diverges

    Transfer failures are logged and retried with the next step's export.
    """
    log = AdaptationLog()
    log.probe_baseline = session.probe()
    for index in range(1, (steps if steps is not None else session.station.settings.steps) + 1):
        try:
            row = session.step(index)
        except (DynamicsError, Crash) as e:
            session.node.log.crashed = True
            session.node.log.error = str(e)
            log.crashed = True
            log.success = False
            log.errors.append(f"step {index}: drone crashed: {e}")
            logger.error("drone crashed during adaptation", step=index, error=str(e))
            break
        except TrainingDiverged as e:
            log.diverged = True
            log.success = False
            log.errors.append(f"step {index}: {e}")
            break
        if not row["transfer_ok"]:
            log.errors.append(f"step {index}: transfer failed")
        log.rows.append(row)
    return log


def build_session(bundle: AgentBundle, sim_buffer: Optional[ReplayBuffer], cfg: AttitudeConfig,
                  settings: AdaptSettings, link: LinkSettings, seed: int, drop_prob: float = 0.0,
                  corrupt_prob: float = 0.0, dump_dir=None) -> LiveSession:
    """Drone on the real twin of cfg, ground station on cfg"""
    twin = make_real_twin(cfg)
    env = AttitudeEnv(twin, settings.flight_profile)
    env.reset(np.random.default_rng(seed))
    station = GroundStation(bundle, sim_buffer, cfg, settings, seed=seed, dump_dir=dump_dir)
    policy = station.bundle.policy.copy()
    uplink = ObsUplink(twin.control_rate_hz, link.obs_rate_hz, link.byte_rate)
    node = DroneNode(env, policy, station.bundle.version, SwapBuffer(policy.input_size, policy.output_size),
                     uplink=uplink, stochastic=station.bundle.stochastic)
    return LiveSession(
        node, station, link,
        uplink_channel=ChannelSim.from_settings(link, corrupt_prob, drop_prob, seed=seed + 10),
        downlink_channel=ChannelSim.from_settings(link, corrupt_prob, drop_prob, seed=seed + 11),
        probe_cfg=twin, probe_seed=seed + 1000,
    )


def _with_hash(frame: pd.DataFrame, config_hash: str) -> pd.DataFrame:
    frame = frame.copy()
    frame["config_hash"] = config_hash
    return frame


def adaptation_experiment(seeds: Sequence[int], anchored: bool,
                          pretrain: Callable[[int], Tuple[AgentBundle, ReplayBuffer]],
                          cfg: Optional[AttitudeConfig] = None, settings: Optional[AdaptSettings] = None,
                          link: Optional[LinkSettings] = None, drop_prob: float = 0.0, corrupt_prob: float = 0.0,
                          out_dir=None, config_hash: str = "") -> Dict:
    """
    Before/after comparison of live adaptation over several seeds

    Args:
        seeds: One full pipeline per seed
        anchored: Adapt with the anchor critic
        pretrain: seed -> (sim-trained bundle, sim replay buffer)
        cfg: Sim attitude config; the drone flies its real twin
        settings: Adaptation schedule (its `anchored` is overridden)
        link: Link settings for both directions
        drop_prob, corrupt_prob: Channel loss applied to both directions
        out_dir: Where per-seed flight logs, adaptation CSVs and spectra go
        config_hash: Stamped into every output

    Returns:
        Dict with success, errors, per-seed rows and the mean/std summary
    """
    cfg = cfg or AttitudeConfig()
    base = settings or AdaptSettings()
    settings = dataclasses.replace(base, anchored=anchored)
    link = link or LinkSettings()
    out = Path(out_dir) if out_dir is not None else None
    twin = make_real_twin(cfg)
    rows = []
    errors = []

    for seed in seeds:
        bundle, sim_buffer = pretrain(seed)
        eval_seed = seed + 2000
        before, before_log = probe_flight(bundle.policy, twin, settings.flight_profile, settings.eval_steps,
                                          eval_seed, bundle.stochastic)
        seed_dir = out / f"seed{seed}" if out is not None else None
        session = build_session(bundle, sim_buffer, cfg, settings, link, seed, drop_prob, corrupt_prob,
                                dump_dir=seed_dir / "diverged" if seed_dir is not None else None)
        log = run_ground_station(session)
        after, after_log = probe_flight(session.station.bundle.policy, twin, settings.flight_profile,
                                        settings.eval_steps, eval_seed, bundle.stochastic)
        errors.extend(f"seed {seed}: {e}" for e in log.errors)

        probe_ratio = log.probe_max / log.probe_baseline if log.probe_baseline > 0 else math.nan
        swap_latencies = [s.latency_s for s in session.node.log.swaps]
        row = {
            "seed": seed,
            "anchored": anchored,
            **{f"{k}_before": before[k] for k in REPORT_METRICS},
            **{f"{k}_after": after[k] for k in REPORT_METRICS},
            "probe_baseline": log.probe_baseline,
            "probe_max": log.probe_max,
            "probe_ratio": probe_ratio,
            "crashed": log.crashed or after["crashed"],
            "diverged": bool(log.diverged or log.crashed or after["crashed"]
                             or not probe_ratio <= settings.divergence_factor),
            "steps_completed": len(log.rows),
            "transfers_failed": sum(1 for r in session.reports if not r.success),
            "swap_latency_s": float(np.mean(swap_latencies)) if swap_latencies else math.nan,
            "high_band_before": _high_band(before_log, twin.control_rate_hz),
            "high_band_after": _high_band(after_log, twin.control_rate_hz),
        }
        rows.append(row)

        if seed_dir is not None:
            seed_dir.mkdir(parents=True, exist_ok=True)
            _with_hash(session.node.log.to_frame(), config_hash).to_csv(seed_dir / "flight_log.csv", index=False)
            _with_hash(session.node.log.swaps_frame(), config_hash).to_csv(seed_dir / "swaps.csv", index=False)
            _with_hash(log.to_frame(), config_hash).to_csv(seed_dir / "adaptation.csv", index=False)
            for name, flight in (("before", before_log), ("after", after_log)):
                if len(flight) >= 8:
                    duty = flight.trace(twin.control_rate_hz).duty
                    _with_hash(spectrum_frame(duty, twin.control_rate_hz), config_hash).to_csv(
                        seed_dir / f"spectrum_{name}.csv", index=False)

    table = pd.DataFrame(rows)
    summary = _summarize_arm(table)
    report = {"success": not errors, "errors": errors, "anchored": anchored, "seeds": list(seeds),
              "config_hash": config_hash, "summary": summary, "per_seed": rows}
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        _with_hash(table, config_hash).to_csv(out / "per_seed.csv", index=False)
        (out / "summary.json").write_text(json.dumps(report, indent=2, default=_json_default))
    return report


def _high_band(flight: FlightLog, rate_hz: float) -> float:
    if len(flight) < 8:
        return math.nan
    return high_band_amplitude(flight.trace(rate_hz).duty, rate_hz)


def _summarize_arm(table: pd.DataFrame) -> Dict[str, float]:
    """Mean and std before/after plus after/before ratios of the means"""
    summary: Dict[str, float] = {}
    for metric in REPORT_METRICS:
        for when in ("before", "after"):
            column = table[f"{metric}_{when}"].replace([np.inf, -np.inf], np.nan)
            summary[f"{metric}_{when}_mean"] = float(column.mean())
            summary[f"{metric}_{when}_std"] = float(column.std(ddof=0))
        before = summary[f"{metric}_before_mean"]
        summary[f"{metric}_ratio"] = summary[f"{metric}_after_mean"] / before if before else math.nan
    summary["diverged"] = int(table["diverged"].sum())
    summary["crashed"] = int(table["crashed"].sum())
    summary["probe_within_2x"] = int((table["probe_ratio"] <= 2.0).sum())
    return summary


def _json_default(value):
    if isinstance(value, (np.integer, np.bool_)):
        return value.item()
    if isinstance(value, np.floating):
        return float(value)
    return str(value)
