import struct

import numpy as np
import pytest

from swaplink.frames import (
    FRAME_OVERHEAD,
    MAX_PAYLOAD,
    SYNC,
    BadCrc,
    BadLength,
    BadSync,
    Frame,
    FrameReader,
    FrameType,
    Truncated,
    UnknownFrameType,
    crc32,
    decode_frame,
    encode_frame,
    framed_size,
)


def bitwise_crc32(data: bytes) -> int:
    crc = 0xFFFFFFFF
    for byte in data:
        crc ^= byte
        for _ in range(8):
            crc = (crc >> 1) ^ (0xEDB88320 if crc & 1 else 0)
    return crc ^ 0xFFFFFFFF


def test_crc_check_value():
    assert crc32(b"123456789") == 0xCBF43926
    assert bitwise_crc32(b"123456789") == 0xCBF43926


def test_crc_matches_bitwise_reference(rng):
    for size in (0, 1, 7, 64, 241):
        data = rng.integers(0, 256, size=size, dtype=np.uint8).tobytes()
        assert crc32(data) == bitwise_crc32(data)


def test_layout():
    raw = encode_frame(Frame(FrameType.ACK, 0x1234, b"\x01\x02\x03"))
    assert raw[:2] == SYNC
    assert raw[2] == FrameType.ACK
    assert raw[3:5] == b"\x34\x12"
    assert raw[5:7] == b"\x03\x00"
    assert len(raw) == framed_size(3) == FRAME_OVERHEAD + 3 == 14
    assert struct.unpack("<I", raw[-4:])[0] == crc32(raw[2:-4])


def test_decode():
    frame = Frame(FrameType.MODEL_CHUNK, 9, bytes(range(MAX_PAYLOAD)))
    assert decode_frame(encode_frame(frame)) == frame


def test_every_single_bit_flip_rejected():
    raw = encode_frame(Frame(FrameType.COMMIT, 3, b"\x10\x20\x30\x40\x05\x00"))
    for bit in range(len(raw) * 8):
        damaged = bytearray(raw)
        damaged[bit // 8] ^= 1 << (bit % 8)
        with pytest.raises((BadSync, BadLength, BadCrc, Truncated)):
            decode_frame(bytes(damaged))


def test_oversized_payload():
    with pytest.raises(BadLength):
        encode_frame(Frame(FrameType.OBS, 0, bytes(MAX_PAYLOAD + 1)))


def test_bad_sequence():
    with pytest.raises(ValueError):
        encode_frame(Frame(FrameType.OBS, 0x10000))


def test_unknown_type_after_crc():
    body = struct.pack("<BHH", 99, 0, 0)
    raw = SYNC + body + struct.pack("<I", crc32(body))
    with pytest.raises(UnknownFrameType):
        decode_frame(raw)


def test_truncated_and_trailing():
    raw = encode_frame(Frame(FrameType.ACK, 1, b"\x00\x00\x00\x00"))
    with pytest.raises(Truncated):
        decode_frame(raw[:-1])
    with pytest.raises(BadLength):
        decode_frame(raw + b"\x00")


def test_reader_handles_any_split(rng):
    frames = [Frame(FrameType.OBS, i, bytes([i]) * int(rng.integers(0, 60))) for i in range(20)]
    stream = b"".join(encode_frame(f) for f in frames)
    reader = FrameReader()
    out = []
    position = 0
    while position < len(stream):
        step = int(rng.integers(1, 17))
        reader.push(stream[position:position + step])
        out.extend(reader.pop())
        position += step
    assert out == frames
    assert reader.error_count == 0


def test_reader_resyncs_after_garbage_and_corruption():
    good = [Frame(FrameType.ACK, i, struct.pack("<I", i)) for i in range(3)]
    damaged = bytearray(encode_frame(Frame(FrameType.ACK, 7, b"\x07\x00\x00\x00")))
    damaged[8] ^= 0x40
    reader = FrameReader()
    reader.push(b"\x00\xff\x13" + encode_frame(good[0]) + bytes(damaged) + encode_frame(good[1])
                + b"\xa5" + encode_frame(good[2]))
    assert reader.pop() == good
    assert reader.error_count >= 2


def test_reader_keeps_partial_sync():
    raw = encode_frame(Frame(FrameType.COMMIT_ACK, 2, b"\x02\x00"))
    reader = FrameReader()
    reader.push(b"\x01\x02" + raw[:1])
    assert reader.pop() == []
    reader.push(raw[1:])
    assert reader.pop() == [Frame(FrameType.COMMIT_ACK, 2, b"\x02\x00")]
