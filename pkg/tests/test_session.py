import dataclasses
import json
import math

import numpy as np
import pytest

from conftest import constant_policy, fill_buffer
from envs.attitude import AttitudeConfig
from live.drone import DroneNode
from live.ground import AdaptSettings
from live.realtime import check_versions
from live.session import LiveSession, adaptation_experiment, build_session, probe_flight, run_ground_station
from rl.agent import make_bundle
from rl.buffer import SIM, ReplayBuffer
from swaplink.channel import LinkSettings
from swaplink.swap import SwapBuffer

SETTINGS = AdaptSettings(steps=2, transitions_per_step=40, updates_per_step=2, batch_size=16,
                         probe_steps=30, eval_steps=60, live_buffer_size=500)


def pretrained(seed):
    rng = np.random.default_rng(seed)
    bundle = make_bundle("ddpgx", 13, 4, rng, hidden=(8, 8))
    return bundle, fill_buffer(ReplayBuffer(13, 4, 400, SIM, seed=seed), 200, rng)


@pytest.mark.parametrize("anchored", [True, False])
def test_session_ships_one_version_per_step(anchored):
    bundle, sim_buffer = pretrained(0)
    settings = dataclasses.replace(SETTINGS, anchored=anchored)
    start = bundle.version
    session = build_session(bundle, sim_buffer if anchored else None, AttitudeConfig(), settings,
                            LinkSettings(), seed=0)
    log = run_ground_station(session)
    assert log.success, log.errors
    assert len(log.rows) == 2
    assert [r["version"] for r in log.rows] == [start + 1, start + 2]
    assert all(r["transfer_ok"] for r in log.rows)
    assert all(r["transitions"] >= 40 for r in log.rows)
    assert session.station.bundle.anchored == anchored

    flight = session.node.log
    assert len(flight.swaps) == 2
    assert check_versions(flight, {}) == []
    # every swap happens after the commit completed on the simulated downlink
    for swap, report in zip(flight.swaps, session.reports):
        assert swap.t >= report.commit_time
        assert swap.latency_s >= 0.0


def test_session_frame_has_fixed_columns():
    bundle, sim_buffer = pretrained(1)
    session = build_session(bundle, sim_buffer, AttitudeConfig(), SETTINGS, LinkSettings(), seed=1)
    frame = run_ground_station(session, steps=1).to_frame()
    assert len(frame) == 1
    assert frame["probe_mae"].notna().all()
    assert math.isfinite(frame["transfer_s"].iloc[0])


def test_session_survives_lossy_link():
    bundle, sim_buffer = pretrained(2)
    link = LinkSettings(max_retries=-1)
    session = build_session(bundle, sim_buffer, AttitudeConfig(), SETTINGS, link, seed=2, drop_prob=0.05)
    log = run_ground_station(session, steps=1)
    assert not log.crashed
    assert log.rows[0]["lost_packets"] >= 0
    assert log.rows[0]["transfer_ok"]


def test_session_needs_uplink():
    bundle, sim_buffer = pretrained(3)
    session = build_session(bundle, sim_buffer, AttitudeConfig(), SETTINGS, LinkSettings(), seed=3)
    bare = DroneNode(session.node.env, session.node.policy, 1, SwapBuffer(13, 4))
    with pytest.raises(ValueError):
        LiveSession(bare, session.station)


def test_probe_flight_reports_crash():
    cfg = AttitudeConfig()
    stats, log = probe_flight(constant_policy([-1.0, -1.0, 1.0, 1.0]), cfg, "hover", 500, seed=0)
    assert log.crashed
    assert stats["mae"] == math.inf
    stats, log = probe_flight(constant_policy(np.zeros(4)), cfg, "small", 50, seed=0)
    assert not stats["crashed"]
    assert len(log) == 50


def test_adaptation_experiment_outputs(tmp_path):
    report = adaptation_experiment([0], True, pretrained, AttitudeConfig(), SETTINGS, LinkSettings(),
                                   out_dir=tmp_path, config_hash="abc123")
    assert report["success"], report["errors"]
    summary = report["summary"]
    for metric in ("mae", "sm", "power"):
        assert f"{metric}_ratio" in summary
    row = report["per_seed"][0]
    assert row["steps_completed"] == 2
    assert row["transfers_failed"] == 0
    assert row["high_band_before"] >= 0.0

    seed_dir = tmp_path / "seed0"
    for name in ("flight_log.csv", "swaps.csv", "adaptation.csv", "spectrum_before.csv", "spectrum_after.csv"):
        assert (seed_dir / name).exists()
    assert (tmp_path / "per_seed.csv").exists()
    saved = json.loads((tmp_path / "summary.json").read_text())
    assert saved["config_hash"] == "abc123"
    assert saved["anchored"] is True
