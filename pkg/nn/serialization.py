"""
Model image format

    magic "SWNN" | version u8 | layer count u8 | layer sizes u16 each
    | activation tag u8 per layer boundary | float32 payload | CRC-32 u32

All little-endian. The CRC covers every preceding byte. Hidden boundaries
always carry the tanh tag; the last tag is the output activation.
"""

import binascii
import struct
from typing import Tuple

import numpy as np

from nn.mlp import IDENTITY, TANH, Mlp, param_count

MAGIC = b"SWNN"
FORMAT_VERSION = 1
ACTIVATION_TAGS = {IDENTITY: 0, TANH: 1}
TAG_ACTIVATIONS = {tag: name for name, tag in ACTIVATION_TAGS.items()}
CRC_SIZE = 4


class ImageDecodeError(ValueError):
    """Truncated or garbled model image; offset is the first bad byte"""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


def header_size(layer_count: int) -> int:
    return len(MAGIC) + 2 + 2 * layer_count + (layer_count - 1)


def image_size(layer_sizes) -> int:
    """Total serialized length for a given architecture"""
    return header_size(len(layer_sizes)) + 4 * param_count(layer_sizes) + CRC_SIZE


def serialize(net: Mlp) -> bytes:
    """Encode a network as a CRC-protected model image"""
    if len(net.layer_sizes) > 255 or max(net.layer_sizes) > 0xFFFF:
        raise ValueError(f"Architecture {net.layer_sizes} does not fit the image header")
    header = bytearray(MAGIC)
    header += struct.pack("<BB", FORMAT_VERSION, len(net.layer_sizes))
    header += struct.pack(f"<{len(net.layer_sizes)}H", *net.layer_sizes)
    boundaries = len(net.layer_sizes) - 1
    tags = [ACTIVATION_TAGS[TANH]] * (boundaries - 1) + [ACTIVATION_TAGS[net.output_activation]]
    header += bytes(tags)
    body = bytes(header) + np.asarray(net.weights, dtype="<f4").tobytes()
    return body + struct.pack("<I", binascii.crc32(body) & 0xFFFFFFFF)


def read_header(data: bytes) -> Tuple[Tuple[int, ...], str, int]:
    """
    Parse and validate the image header

    Returns:
        (layer sizes, output activation, payload offset)
    """
    if len(data) < len(MAGIC) + 2:
        raise ImageDecodeError("Image shorter than fixed header", len(data))
    if data[:len(MAGIC)] != MAGIC:
        raise ImageDecodeError("Bad magic", 0)
    version, count = struct.unpack_from("<BB", data, len(MAGIC))
    if version != FORMAT_VERSION:
        raise ImageDecodeError(f"Unsupported format version {version}", len(MAGIC))
    if count < 2:
        raise ImageDecodeError(f"Layer count {count} too small", len(MAGIC) + 1)

    offset = len(MAGIC) + 2
    if len(data) < header_size(count):
        raise ImageDecodeError("Truncated layer table", len(data))
    sizes = struct.unpack_from(f"<{count}H", data, offset)
    for index, size in enumerate(sizes):
        if size == 0:
            raise ImageDecodeError("Zero-width layer", offset + 2 * index)
    offset += 2 * count

    activation = TANH
    for index in range(count - 1):
        tag = data[offset + index]
        if tag not in TAG_ACTIVATIONS:
            raise ImageDecodeError(f"Unknown activation tag {tag}", offset + index)
        if index < count - 2 and TAG_ACTIVATIONS[tag] != TANH:
            raise ImageDecodeError("Hidden layers must be tanh", offset + index)
        activation = TAG_ACTIVATIONS[tag]
    offset += count - 1
    return tuple(sizes), activation, offset


def deserialize(data: bytes, verify: bool = True) -> Mlp:
    """
    Decode a model image

    Args:
        data: Image bytes
        verify: Check the trailing CRC-32 (disable only for diagnostics)

    Returns:
        Network with float32 weights, bit-identical to the serialized one
    """
    data = bytes(data)
    sizes, activation, offset = read_header(data)
    payload_len = 4 * param_count(sizes)
    expected = offset + payload_len + CRC_SIZE
    if len(data) < expected:
        raise ImageDecodeError(f"Image truncated: need {expected} bytes, have {len(data)}", len(data))
    if len(data) > expected:
        raise ImageDecodeError(f"Trailing bytes after image ({len(data) - expected})", expected)

    if verify:
        stored = struct.unpack_from("<I", data, offset + payload_len)[0]
        computed = binascii.crc32(data[:offset + payload_len]) & 0xFFFFFFFF
        if stored != computed:
            raise ImageDecodeError(f"Image CRC mismatch {stored:#010x} != {computed:#010x}", offset + payload_len)

    weights = np.frombuffer(data, dtype="<f4", count=payload_len // 4, offset=offset).astype(np.float32)
    return Mlp(sizes, weights, activation)


def image_crc(data: bytes) -> int:
    """CRC-32 stored at the end of an image"""
    if len(data) < CRC_SIZE:
        raise ImageDecodeError("Image too short for CRC", len(data))
    return struct.unpack_from("<I", data, len(data) - CRC_SIZE)[0]
