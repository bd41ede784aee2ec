"""
Replay buffers

Two roles exist: 'sim' (simulation experience, feeds the anchor critic) and
'live' (twin/real experience, feeds the live critic). A buffer only ever
samples from itself, and every batch carries its buffer's role.

Snapshot format (little-endian):
    magic "SWRB" | version u8 | role u8 | obs size u16 | action size u16
    | capacity u32 | count u32 | records...
    record: length u32 | obs f32* | action f32* | reward f32 | next obs f32*
            | done u8 | policy version u16
"""

import struct
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

SIM = "sim"
LIVE = "live"
ROLES = (SIM, LIVE)

SNAPSHOT_MAGIC = b"SWRB"
SNAPSHOT_VERSION = 1


class BufferUnderflow(ValueError):
    """Sampling before the buffer holds a full batch"""


class SnapshotError(ValueError):
    """Unreadable buffer snapshot"""


@dataclass
class Transition:
    obs: np.ndarray
    action: np.ndarray
    reward: float
    next_obs: np.ndarray
    done: bool = False
    version: int = 0


@dataclass
class Batch:
    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_obs: np.ndarray
    done: np.ndarray
    role: str
    versions: Optional[np.ndarray] = None
    reward_scale: float = 1.0

    def __len__(self) -> int:
        return len(self.rewards)

    def scaled(self, gamma: float) -> "Batch":
        """Rewards multiplied by (1 - gamma) so Q-values stay in [0, 1]"""
        return Batch(self.obs, self.actions, self.rewards * (1.0 - gamma), self.next_obs, self.done,
                     self.role, self.versions, reward_scale=self.reward_scale * (1.0 - gamma))


class ReplayBuffer:
    """Ring buffer of transitions with a role tag and its own sampling RNG"""

    def __init__(self, obs_size: int, action_size: int, capacity: int, role: str = SIM, seed: int = 0):
        if role not in ROLES:
            raise ValueError(f"Unknown buffer role {role!r}")
        if capacity <= 0:
            raise ValueError("Buffer capacity must be positive")
        self.obs_size = obs_size
        self.action_size = action_size
        self.capacity = capacity
        self.role = role
        self.rng = np.random.default_rng(seed)
        self.lock = threading.Lock()

        self.obs = np.zeros((capacity, obs_size), dtype=np.float32)
        self.actions = np.zeros((capacity, action_size), dtype=np.float32)
        self.rewards = np.zeros(capacity, dtype=np.float32)
        self.next_obs = np.zeros((capacity, obs_size), dtype=np.float32)
        self.done = np.zeros(capacity, dtype=np.float32)
        self.versions = np.zeros(capacity, dtype=np.int64)
        self.ptr = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def add(self, obs, action, reward: float, next_obs, done: bool = False, version: int = 0):
        if not 0.0 <= reward <= 1.0:
            raise ValueError(f"Reward {reward} outside [0, 1]")
        with self.lock:
            i = self.ptr
            self.obs[i] = obs
            self.actions[i] = action
            self.rewards[i] = reward
            self.next_obs[i] = next_obs
            self.done[i] = float(done)
            self.versions[i] = version
            self.ptr = (self.ptr + 1) % self.capacity
            self.size = min(self.size + 1, self.capacity)

    def add_transition(self, t: Transition):
        self.add(t.obs, t.action, t.reward, t.next_obs, t.done, t.version)

    def sample(self, batch_size: int) -> Batch:
        with self.lock:
            if batch_size <= 0 or self.size < batch_size:
                raise BufferUnderflow(f"{self.role} buffer holds {self.size}, batch needs {batch_size}")
            idx = self.rng.integers(0, self.size, size=batch_size)
            return Batch(
                obs=self.obs[idx].astype(np.float64),
                actions=self.actions[idx].astype(np.float64),
                rewards=self.rewards[idx].astype(np.float64),
                next_obs=self.next_obs[idx].astype(np.float64),
                done=self.done[idx].astype(np.float64),
                role=self.role,
                versions=self.versions[idx].copy(),
            )

    def all_obs(self) -> np.ndarray:
        with self.lock:
            return self.obs[:self.size].astype(np.float64)

    def save(self, path) -> Path:
        """Write a length-prefixed record snapshot"""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        record = struct.Struct(f"<{self.obs_size}f{self.action_size}ff{self.obs_size}fBH")
        with self.lock, open(path, "wb") as f:
            f.write(SNAPSHOT_MAGIC)
            f.write(struct.pack("<BBHHII", SNAPSHOT_VERSION, ROLES.index(self.role), self.obs_size,
                                self.action_size, self.capacity, self.size))
            order = np.arange(self.size) if self.size < self.capacity else \
                (np.arange(self.size) + self.ptr) % self.capacity
            for i in order:
                payload = record.pack(*self.obs[i], *self.actions[i], self.rewards[i], *self.next_obs[i],
                                      int(self.done[i]), int(self.versions[i]) & 0xFFFF)
                f.write(struct.pack("<I", len(payload)))
                f.write(payload)
        return path

    @classmethod
    def load(cls, path, seed: int = 0) -> "ReplayBuffer":
        data = Path(path).read_bytes()
        head = struct.Struct("<BBHHII")
        if data[:4] != SNAPSHOT_MAGIC or len(data) < 4 + head.size:
            raise SnapshotError(f"{path} is not a buffer snapshot")
        version, role, obs_size, action_size, capacity, count = head.unpack_from(data, 4)
        if version != SNAPSHOT_VERSION or role >= len(ROLES):
            raise SnapshotError(f"Unsupported snapshot header in {path}")
        buffer = cls(obs_size, action_size, capacity, ROLES[role], seed)
        record = struct.Struct(f"<{obs_size}f{action_size}ff{obs_size}fBH")
        offset = 4 + head.size
        for _ in range(count):
            if offset + 4 > len(data):
                raise SnapshotError(f"Snapshot truncated at offset {offset}")
            (length,) = struct.unpack_from("<I", data, offset)
            offset += 4
            if length != record.size or offset + length > len(data):
                raise SnapshotError(f"Bad record length {length} at offset {offset - 4}")
            values = record.unpack_from(data, offset)
            offset += length
            o = values[:obs_size]
            a = values[obs_size:obs_size + action_size]
            r = values[obs_size + action_size]
            n = values[obs_size + action_size + 1:2 * obs_size + action_size + 1]
            done, ver = values[-2], values[-1]
            buffer.add(o, a, min(max(r, 0.0), 1.0), n, bool(done), ver)
        return buffer
