"""
Lossy serial-link simulator with a simulated clock

Every transmit() advances the clock by the serialization time of the bytes
plus the configured latency, whether or not the frame arrives. Randomness
comes from one seeded generator, so a (seed, traffic) pair always replays
the same losses.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

import config


@dataclass
class LinkSettings:
    """
    Serial link and transfer protocol settings

    Attributes:
        baud: Line rate in bits per second
        bits_per_byte: 10 for 8N1 framing
        window: Chunk frames in flight (1 = stop-and-wait)
        ack_timeout_s: Wait before retransmitting an unanswered frame
        max_retries: Consecutive retries per frame before giving up (< 0 = unbounded)
        idle_timeout_s: Receiver discards a partial image after this much silence
        obs_rate_hz: Requested observation uplink rate (capped by the line rate)
        max_image_size: Largest model image the receiver accepts
    """

    baud: int = 115200
    bits_per_byte: int = 10
    window: int = 1
    ack_timeout_s: float = 0.05
    max_retries: int = 10
    idle_timeout_s: float = 2.0
    obs_rate_hz: float = 164.0
    max_image_size: int = 1 << 20

    def __post_init__(self):
        if self.baud <= 0 or self.bits_per_byte <= 0:
            raise ValueError("baud and bits_per_byte must be positive")
        if self.window < 1:
            raise ValueError("window must be at least 1")

    @property
    def byte_rate(self) -> float:
        return self.baud / self.bits_per_byte


def load_link_settings(values, base: Optional[LinkSettings] = None) -> LinkSettings:
    return config.build(LinkSettings, values, "link", base=base)


class ChannelSim:
    """
    One direction-agnostic link

    Args:
        byte_rate: Bytes per second (11520 for 115200 baud 8N1)
        corrupt_prob: Per-byte probability of a single flipped bit
        drop_prob: Per-frame probability of total loss
        latency_s: Fixed delay added to every transmission
        seed: RNG seed
    """

    def __init__(self, byte_rate: float = 11520.0, corrupt_prob: float = 0.0, drop_prob: float = 0.0,
                 latency_s: float = 0.0, seed: int = 0):
        if byte_rate <= 0:
            raise ValueError("byte_rate must be positive")
        if not (0.0 <= corrupt_prob <= 1.0 and 0.0 <= drop_prob <= 1.0):
            raise ValueError("Probabilities must be in [0, 1]")
        self.byte_rate = byte_rate
        self.corrupt_prob = corrupt_prob
        self.drop_prob = drop_prob
        self.latency_s = latency_s
        self.rng = np.random.default_rng(seed)
        self.clock = 0.0
        self.bytes_carried = 0
        self.frames_dropped = 0
        self.bytes_corrupted = 0

    @classmethod
    def from_settings(cls, settings: LinkSettings, corrupt_prob: float = 0.0, drop_prob: float = 0.0,
                      latency_s: float = 0.0, seed: int = 0) -> "ChannelSim":
        return cls(settings.byte_rate, corrupt_prob, drop_prob, latency_s, seed)

    def airtime(self, n_bytes: int) -> float:
        return n_bytes / self.byte_rate

    def mangle(self, data: bytes) -> Optional[bytes]:
        """Apply drop and corruption without touching the clock"""
        if self.rng.random() < self.drop_prob:
            self.frames_dropped += 1
            return None
        if self.corrupt_prob <= 0.0 or not data:
            return bytes(data)
        out = bytearray(data)
        hits = np.flatnonzero(self.rng.random(len(out)) < self.corrupt_prob)
        for i in hits:
            out[i] ^= 1 << int(self.rng.integers(8))
        self.bytes_corrupted += len(hits)
        return bytes(out)

    def transmit(self, data: bytes) -> Optional[bytes]:
        """Send bytes; returns what arrives (possibly corrupted) or None when dropped"""
        self.clock += self.airtime(len(data)) + self.latency_s
        self.bytes_carried += len(data)
        return self.mangle(data)

    def wait(self, seconds: float):
        self.clock += seconds
