import numpy as np
import pytest

from conftest import constant_policy
from envs.attitude import AttitudeConfig, AttitudeEnv, DomainGap
from live.drone import DroneNode, FlightLog, SwapEvent, TickRecord
from live.realtime import check_versions, interval_report, run_realtime, swap_timing_harness
from swaplink.swap import SwapBuffer
from swaplink.transports import MemoryTransport


def record(tick, version, t=None):
    return TickRecord(tick=tick, t=tick * 0.01 if t is None else t, version=version, target=[0.0] * 3,
                      measured=[0.0] * 3, command=[0.0] * 4, duty=[0.5] * 4, reward=1.0)


def test_clean_log_has_no_violations():
    log = FlightLog(records=[record(0, 1), record(1, 1), record(2, 2), record(3, 2)],
                    swaps=[SwapEvent(tick=2, t=0.02, old_version=1, new_version=2, latency_s=0.001)])
    assert check_versions(log, {2: 0.015}) == []


def test_version_change_without_swap_event():
    log = FlightLog(records=[record(0, 1), record(1, 2)])
    problems = check_versions(log, {})
    assert len(problems) == 1
    assert "without a swap event" in problems[0]


def test_version_acting_before_commit_ack():
    log = FlightLog(records=[record(0, 1), record(1, 2)],
                    swaps=[SwapEvent(tick=1, t=0.01, old_version=1, new_version=2, latency_s=0.0)])
    problems = check_versions(log, {2: 0.5})
    assert any("before its COMMIT_ACK" in p for p in problems)


def test_skipped_tick_reported():
    log = FlightLog(records=[record(0, 1), record(2, 1)])
    assert check_versions(log, {}) == ["tick 2 follows 0"]


def test_interval_report_same_distribution():
    rng = np.random.default_rng(0)
    quiet = 0.01 + rng.normal(0.0, 1e-4, size=400)
    busy = 0.01 + rng.normal(0.0, 1e-4, size=400)
    report = interval_report(quiet, busy, 0.01)
    assert report["ks_pvalue"] > 0.001
    assert report["max_deviation_ticks"] < 0.1


def test_interval_report_detects_jitter():
    quiet = np.full(200, 0.01)
    busy = np.concatenate([np.full(190, 0.01), np.full(10, 0.03)])
    report = interval_report(quiet, busy, 0.01)
    assert report["max_deviation_ticks"] == pytest.approx(2.0)


def test_interval_report_too_few_samples():
    report = interval_report(np.array([0.01]), np.array([0.01, 0.01]), 0.01)
    assert np.isnan(report["ks_statistic"])
    assert report["quiet_ticks"] == 1


def test_realtime_node_flies_without_ground_station(rng):
    env = AttitudeEnv(AttitudeConfig(domain_gap=DomainGap.none()), "hover")
    env.reset(rng)
    node = DroneNode(env, constant_policy(np.zeros(4)), 1, SwapBuffer(13, 4))
    drone_end, ground_end = MemoryTransport.pair()
    log = run_realtime(node, drone_end, 0.3)
    assert len(log) > 5
    assert not log.crashed
    assert check_versions(log, {}) == []


def test_swap_timing_harness_swaps_atomically():
    report = swap_timing_harness(constant_policy(np.zeros(4)), AttitudeConfig(domain_gap=DomainGap.none()),
                                 rate_hz=100.0, quiet_s=0.3, transfers=2, seed=0)
    assert report["versions_ok"]
    assert report["final_version"] == 3
    assert 1 <= len(report["swap_latency_ms"]) <= 2
    assert all(t["success"] for t in report["transfers"])
    assert report["ticks"] > 0
