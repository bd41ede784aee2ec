"""
Wire frames

    sync A5 5A | type u8 | sequence u16 | payload length u16 | payload | CRC-32 u32

Little-endian. The CRC (reflected 0x04C11DB7, as binascii.crc32) covers
type through payload and is checked before the type or payload is looked at.
"""

import binascii
import struct
from dataclasses import dataclass
from enum import IntEnum
from typing import List, Optional, Tuple

SYNC = b"\xa5\x5a"
MAX_PAYLOAD = 240
_HEADER = struct.Struct("<BHH")
HEADER_SIZE = len(SYNC) + _HEADER.size
CRC_SIZE = 4
FRAME_OVERHEAD = HEADER_SIZE + CRC_SIZE


class FrameType(IntEnum):
    OBS = 1
    MODEL_META = 2
    MODEL_CHUNK = 3
    ACK = 4
    NAK = 5
    COMMIT = 6
    COMMIT_ACK = 7


class FrameError(ValueError):
    """Undecodable frame"""


class BadSync(FrameError):
    pass


class Truncated(FrameError):
    pass


class BadLength(FrameError):
    pass


class BadCrc(FrameError):
    pass


class UnknownFrameType(FrameError):
    pass


@dataclass(frozen=True)
class Frame:
    type: FrameType
    seq: int
    payload: bytes = b""


def crc32(data: bytes) -> int:
    return binascii.crc32(data) & 0xFFFFFFFF


def framed_size(payload_len: int) -> int:
    return FRAME_OVERHEAD + payload_len


def encode_frame(frame: Frame) -> bytes:
    if len(frame.payload) > MAX_PAYLOAD:
        raise BadLength(f"Payload of {len(frame.payload)} bytes exceeds {MAX_PAYLOAD}")
    if not 0 <= frame.seq <= 0xFFFF:
        raise ValueError(f"Sequence {frame.seq} does not fit u16")
    body = _HEADER.pack(int(frame.type), frame.seq, len(frame.payload)) + frame.payload
    return SYNC + body + struct.pack("<I", crc32(body))


def _parse(data: bytes, exact: bool) -> Tuple[Frame, int]:
    if len(data) < len(SYNC):
        raise Truncated(f"{len(data)} bytes, sync needs {len(SYNC)}")
    if data[:len(SYNC)] != SYNC:
        raise BadSync(f"Expected sync {SYNC.hex()}, got {bytes(data[:len(SYNC)]).hex()}")
    if len(data) < HEADER_SIZE:
        raise Truncated(f"{len(data)} bytes, header needs {HEADER_SIZE}")
    kind, seq, length = _HEADER.unpack_from(data, len(SYNC))
    if length > MAX_PAYLOAD:
        raise BadLength(f"Declared payload {length} exceeds {MAX_PAYLOAD}")
    total = HEADER_SIZE + length + CRC_SIZE
    if len(data) < total:
        raise Truncated(f"{len(data)} bytes, frame needs {total}")
    if exact and len(data) != total:
        raise BadLength(f"{len(data)} bytes for a {total}-byte frame")
    body = bytes(data[len(SYNC):HEADER_SIZE + length])
    (expected,) = struct.unpack_from("<I", data, HEADER_SIZE + length)
    if crc32(body) != expected:
        raise BadCrc(f"CRC {crc32(body):08x} != {expected:08x}")
    try:
        frame_type = FrameType(kind)
    except ValueError:
        raise UnknownFrameType(f"Unknown frame type {kind}")
    return Frame(frame_type, seq, body[_HEADER.size:]), total


def decode_frame(data: bytes) -> Frame:
    """Decode exactly one frame"""
    frame, _ = _parse(data, exact=True)
    return frame


class FrameReader:
    """
    Streaming decoder: push() bytes in any split, pop() frames out

    Garbage and corrupted frames are skipped by hunting for the next sync;
    each skip bumps `error_count`.
    """

    def __init__(self):
        self.buf = bytearray()
        self.error_count = 0
        self.last_error: Optional[FrameError] = None

    def _skip(self, error: FrameError):
        self.error_count += 1
        self.last_error = error

    def push(self, chunk: bytes):
        self.buf.extend(chunk)

    def pop(self) -> List[Frame]:
        frames = []
        while self.buf:
            start = self.buf.find(SYNC)
            if start < 0:
                # keep a possible first sync byte
                keep = 1 if self.buf[-1:] == SYNC[:1] else 0
                if len(self.buf) > keep:
                    self._skip(BadSync(f"Discarded {len(self.buf) - keep} bytes"))
                del self.buf[:len(self.buf) - keep]
                break
            if start > 0:
                self._skip(BadSync(f"Discarded {start} bytes before sync"))
                del self.buf[:start]
            try:
                frame, used = _parse(self.buf, exact=False)
            except Truncated:
                break
            except FrameError as e:
                self._skip(e)
                del self.buf[:len(SYNC)]
                continue
            del self.buf[:used]
            frames.append(frame)
        return frames
