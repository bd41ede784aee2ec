import binascii
import struct

import numpy as np
import pytest

from nn.mlp import IDENTITY, init_mlp
from nn.serialization import ImageDecodeError, deserialize, image_crc, image_size, read_header, serialize


def test_image_is_bit_exact(rng):
    net = init_mlp((13, 32, 32, 4), rng)
    net.weights[3] = np.float32(-0.0)
    data = serialize(net)
    assert len(data) == image_size(net.layer_sizes)
    back = deserialize(data)
    assert back == net
    assert back.weights.tobytes() == net.weights.tobytes()


def test_header_fields(rng):
    net = init_mlp((4, 8, 1), rng, output_activation=IDENTITY)
    data = serialize(net)
    sizes, activation, offset = read_header(data)
    assert sizes == (4, 8, 1)
    assert activation == IDENTITY
    assert offset == 4 + 2 + 3 * 2 + 2
    assert data[:4] == b"SWNN"
    assert image_crc(data) == binascii.crc32(data[:-4]) & 0xFFFFFFFF


def test_every_single_bit_flip_is_rejected(rng):
    data = bytearray(serialize(init_mlp((3, 4, 2), rng)))
    for byte in range(len(data)):
        for bit in (0, 7):
            garbled = bytearray(data)
            garbled[byte] ^= 1 << bit
            with pytest.raises(ImageDecodeError):
                deserialize(bytes(garbled))


def test_truncation_reports_offset(rng):
    data = serialize(init_mlp((3, 4, 2), rng))
    with pytest.raises(ImageDecodeError) as info:
        deserialize(data[:-10])
    assert info.value.offset == len(data) - 10


def test_bad_magic_offset_zero(rng):
    data = b"XXNN" + serialize(init_mlp((3, 4, 2), rng))[4:]
    with pytest.raises(ImageDecodeError) as info:
        deserialize(data)
    assert info.value.offset == 0


def test_trailing_bytes_rejected(rng):
    with pytest.raises(ImageDecodeError):
        deserialize(serialize(init_mlp((3, 4, 2), rng)) + b"\x00")


def test_unverified_decode_skips_crc(rng):
    net = init_mlp((3, 4, 2), rng)
    data = bytearray(serialize(net))
    data[-1] ^= 0xFF
    assert deserialize(bytes(data), verify=False) == net


def test_zero_width_layer_rejected():
    body = b"SWNN" + struct.pack("<BB", 1, 2) + struct.pack("<2H", 3, 0) + bytes([1])
    data = body + struct.pack("<I", binascii.crc32(body))
    with pytest.raises(ImageDecodeError):
        deserialize(data)
