"""
Frame payloads

ObsPacket (59 bytes):
    timestamp ms u32 | control tick u32 | setpoint 3xf32 (deg/s) | rate 3xf32 (deg/s)
    | command 4xf32 | duty 4xu16 (fixed point, 1.0 = 65535) | policy version u16 | status u8
"""

import struct
from dataclasses import dataclass
from typing import Tuple

import numpy as np

_OBS = struct.Struct("<II3f3f4f4HHB")
OBS_PACKET_SIZE = _OBS.size
_META = struct.Struct("<HII")
_CHUNK_HEAD = struct.Struct("<I")
_ACK = struct.Struct("<I")
_NAK = struct.Struct("<IB")
_COMMIT = struct.Struct("<IH")
_COMMIT_ACK = struct.Struct("<H")

DUTY_SCALE = 0xFFFF

STATUS_SWAPPED = 0x01
STATUS_SWAP_ERROR = 0x02
STATUS_DEADLINE_MISS = 0x04

NAK_BAD_FRAME = 1
NAK_NO_TRANSFER = 2
NAK_BAD_OFFSET = 3
NAK_INCOMPLETE = 4
NAK_CRC_MISMATCH = 5
NAK_TOO_LARGE = 6


@dataclass
class ObsPacket:
    timestamp_ms: int
    tick: int
    setpoint: Tuple[float, float, float]
    rate: Tuple[float, float, float]
    command: Tuple[float, float, float, float]
    duty: Tuple[float, float, float, float]
    version: int
    status: int = 0

    def encode(self) -> bytes:
        duty = np.clip(np.round(np.asarray(self.duty, dtype=np.float64) * DUTY_SCALE), 0, DUTY_SCALE).astype(int)
        return _OBS.pack(self.timestamp_ms & 0xFFFFFFFF, self.tick & 0xFFFFFFFF, *self.setpoint, *self.rate,
                         *self.command, *duty.tolist(), self.version & 0xFFFF, self.status & 0xFF)

    @classmethod
    def decode(cls, data: bytes) -> "ObsPacket":
        if len(data) != OBS_PACKET_SIZE:
            raise ValueError(f"Observation packet must be {OBS_PACKET_SIZE} bytes, got {len(data)}")
        v = _OBS.unpack(data)
        return cls(timestamp_ms=v[0], tick=v[1], setpoint=tuple(v[2:5]), rate=tuple(v[5:8]),
                   command=tuple(v[8:12]), duty=tuple(d / DUTY_SCALE for d in v[12:16]),
                   version=v[16], status=v[17])


@dataclass(frozen=True)
class ModelMeta:
    version: int
    total: int
    crc: int

    def encode(self) -> bytes:
        return _META.pack(self.version, self.total, self.crc)

    @classmethod
    def decode(cls, data: bytes) -> "ModelMeta":
        return cls(*_META.unpack(data))


def encode_chunk(offset: int, data: bytes) -> bytes:
    return _CHUNK_HEAD.pack(offset) + data


def decode_chunk(payload: bytes) -> Tuple[int, bytes]:
    if len(payload) < _CHUNK_HEAD.size:
        raise ValueError("Chunk payload shorter than its offset field")
    (offset,) = _CHUNK_HEAD.unpack_from(payload)
    return offset, payload[_CHUNK_HEAD.size:]


CHUNK_HEADER_SIZE = _CHUNK_HEAD.size


def encode_ack(next_offset: int) -> bytes:
    return _ACK.pack(next_offset)


def decode_ack(payload: bytes) -> int:
    return _ACK.unpack(payload)[0]


def encode_nak(next_offset: int, reason: int) -> bytes:
    return _NAK.pack(next_offset, reason)


def decode_nak(payload: bytes) -> Tuple[int, int]:
    return _NAK.unpack(payload)


def encode_commit(crc: int, version: int) -> bytes:
    return _COMMIT.pack(crc, version)


def decode_commit(payload: bytes) -> Tuple[int, int]:
    return _COMMIT.unpack(payload)


def encode_commit_ack(version: int) -> bytes:
    return _COMMIT_ACK.pack(version)


def decode_commit_ack(payload: bytes) -> int:
    return _COMMIT_ACK.unpack(payload)[0]
