import pytest

from swaplink.frames import FrameType, framed_size
from swaplink.packets import (
    OBS_PACKET_SIZE,
    STATUS_SWAPPED,
    ModelMeta,
    ObsPacket,
    decode_chunk,
    decode_nak,
    encode_chunk,
    encode_nak,
)


def test_obs_packet_size():
    assert OBS_PACKET_SIZE == 59
    assert framed_size(OBS_PACKET_SIZE) == 70


def test_obs_packet_fields():
    packet = ObsPacket(timestamp_ms=1234, tick=56, setpoint=(10.0, -20.0, 0.5), rate=(1.0, 2.0, 3.0),
                       command=(-1.0, 0.0, 0.5, 1.0), duty=(0.0, 0.25, 0.5, 1.0), version=7,
                       status=STATUS_SWAPPED)
    raw = packet.encode()
    assert len(raw) == OBS_PACKET_SIZE
    decoded = ObsPacket.decode(raw)
    assert decoded.tick == 56
    assert decoded.setpoint == pytest.approx((10.0, -20.0, 0.5))
    assert decoded.duty == pytest.approx((0.0, 0.25, 0.5, 1.0), abs=1 / 65535)
    assert decoded.version == 7
    assert decoded.status == STATUS_SWAPPED


def test_duty_is_clamped():
    raw = ObsPacket(0, 0, (0, 0, 0), (0, 0, 0), (0, 0, 0, 0), (-0.2, 1.3, 0.5, 0.5), 1).encode()
    assert ObsPacket.decode(raw).duty[:2] == (0.0, 1.0)


def test_obs_packet_wrong_length():
    with pytest.raises(ValueError):
        ObsPacket.decode(bytes(OBS_PACKET_SIZE - 1))


def test_meta_and_chunk_layout():
    assert len(ModelMeta(3, 1000, 0xDEADBEEF).encode()) == 10
    offset, data = decode_chunk(encode_chunk(472, b"abc"))
    assert (offset, data) == (472, b"abc")
    with pytest.raises(ValueError):
        decode_chunk(b"\x00\x01")
    assert decode_nak(encode_nak(236, 3)) == (236, 3)


def test_frame_types_are_distinct():
    assert len({int(t) for t in FrameType}) == len(FrameType)
