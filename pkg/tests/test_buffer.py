import numpy as np
import pytest

from conftest import fill_buffer
from rl.buffer import LIVE, SIM, BufferUnderflow, ReplayBuffer, SnapshotError, Transition


def test_underflow():
    buffer = ReplayBuffer(4, 1, 10)
    with pytest.raises(BufferUnderflow):
        buffer.sample(1)


def test_reward_range_enforced():
    buffer = ReplayBuffer(2, 1, 10)
    with pytest.raises(ValueError):
        buffer.add(np.zeros(2), np.zeros(1), 1.5, np.zeros(2))
    with pytest.raises(ValueError):
        buffer.add(np.zeros(2), np.zeros(1), -0.1, np.zeros(2))


def test_unknown_role():
    with pytest.raises(ValueError):
        ReplayBuffer(2, 1, 10, role="real")


def test_batches_carry_role(sim_buffer, live_buffer):
    assert sim_buffer.sample(32).role == SIM
    assert live_buffer.sample(32).role == LIVE


def test_ring_overwrites_oldest(rng):
    buffer = ReplayBuffer(1, 1, 3)
    for i in range(5):
        buffer.add([float(i)], [0.0], 0.5, [0.0])
    assert len(buffer) == 3
    assert sorted(buffer.all_obs()[:, 0]) == [2.0, 3.0, 4.0]


def test_scaled_batch(sim_buffer):
    batch = sim_buffer.sample(16)
    scaled = batch.scaled(0.99)
    assert scaled.rewards == pytest.approx(batch.rewards * 0.01)
    assert scaled.reward_scale == pytest.approx(0.01)
    assert scaled.rewards.max() <= 0.01


def test_versions_kept():
    buffer = ReplayBuffer(2, 1, 8, LIVE)
    buffer.add_transition(Transition(np.ones(2), np.zeros(1), 0.2, np.ones(2), False, version=7))
    assert buffer.sample(4).versions.tolist() == [7, 7, 7, 7]


def test_snapshot_reload(tmp_path, rng):
    buffer = fill_buffer(ReplayBuffer(4, 1, 50, LIVE), 70, rng)
    loaded = ReplayBuffer.load(buffer.save(tmp_path / "live.swrb"))
    assert loaded.role == LIVE
    assert len(loaded) == 50
    assert np.allclose(np.sort(loaded.all_obs(), axis=0), np.sort(buffer.all_obs(), axis=0))


def test_snapshot_errors(tmp_path, rng):
    path = fill_buffer(ReplayBuffer(4, 1, 10), 5, rng).save(tmp_path / "b.swrb")
    data = path.read_bytes()
    (tmp_path / "short.swrb").write_bytes(data[:-3])
    with pytest.raises(SnapshotError):
        ReplayBuffer.load(tmp_path / "short.swrb")
    (tmp_path / "magic.swrb").write_bytes(b"XXXX" + data[4:])
    with pytest.raises(SnapshotError):
        ReplayBuffer.load(tmp_path / "magic.swrb")
