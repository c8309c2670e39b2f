"""Reference implementations used as test oracles.

Each one is written from the definition, deliberately slow and sharing no
code with the package.
"""
from __future__ import annotations

import math
import struct

import numpy as np

POLY = 0xEDB88320


def crc32_bitwise(data: bytes, crc: int = 0xFFFFFFFF) -> int:
    """Reflected CRC-32, one bit at a time; returns the finalised value."""
    for byte in data:
        crc ^= byte
        for _ in range(8):
            crc = (crc >> 1) ^ POLY if crc & 1 else crc >> 1
    return crc ^ 0xFFFFFFFF


def crc32_bitwise_np(rows: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    """Bit-serial CRC-32 vectorised across rows of a zero-padded matrix.
    Row i contributes its first lengths[i] bytes."""
    crc = np.full(rows.shape[0], 0xFFFFFFFF, dtype=np.uint32)
    poly = np.uint32(POLY)
    for col in range(rows.shape[1]):
        live = lengths > col
        c = crc ^ rows[:, col].astype(np.uint32)
        for _ in range(8):
            c = np.where(c & 1, (c >> 1) ^ poly, c >> 1).astype(np.uint32)
        crc = np.where(live, c, crc)
    return crc ^ np.uint32(0xFFFFFFFF)


# field positions in the IP image that the invariant CRC ignores, written
# out from the header layouts: IPv4 TOS, TTL, checksum; UDP checksum; the
# BTH byte after the partition key
ICRC_MASK = {1: "tos", 8: "ttl", 10: "ip_csum", 11: "ip_csum", 26: "udp_csum", 27: "udp_csum", 32: "bth_resv8a"}


def icrc_reference(image_without_trailer: bytes) -> int:
    pseudo = bytearray(b"\xff" * 8)
    for i, b in enumerate(image_without_trailer):
        pseudo.append(0xFF if i in ICRC_MASK else b)
    return crc32_bitwise(bytes(pseudo))


def psn_class_reference(expected: int, incoming: np.ndarray) -> np.ndarray:
    """0 in order, 1 duplicate (within 2^23 behind), 2 sequence error."""
    behind = (expected - incoming.astype(np.int64)) % (1 << 24)
    out = np.full(incoming.shape, 2, dtype=np.int8)
    out[behind == 0] = 0
    out[(behind >= 1) & (behind <= 1 << 23)] = 1
    return out


def segment_reference(length: int, mtu: int) -> list:
    """(payload length, pad) per packet for one message."""
    n = max(1, -(-length // mtu))
    sizes = [mtu] * (n - 1) + [length - mtu * (n - 1)]
    return [(s, (4 - s % 4) % 4) for s in sizes]


_DENSE = struct.Struct("<13f")
_SPARSE = struct.Struct("<26I")


def dlrm_reference(data: bytes, modulus: int = 1 << 20) -> bytes:
    """Per-record scalar transform: log(1 + max(x, 0)) rounded to float32,
    sparse ids mod N."""
    out = bytearray()
    for off in range(0, len(data), 156):
        dense = _DENSE.unpack_from(data, off)
        sparse = _SPARSE.unpack_from(data, off + 52)
        t = []
        for x in dense:
            x = x if x > 0 else 0.0  # NaN and -0.0 fall through to 0.0
            t.append(math.log1p(x))
        out += _DENSE.pack(*t)
        out += _SPARSE.pack(*(v % modulus for v in sparse))
    return bytes(out)
