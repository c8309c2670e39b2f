"""Invariant CRC for RoCE v2 packets.

The ICRC is the reflected CRC-32 (polynomial 0xEDB88320, init and final xor
all ones) over a pseudo packet: eight 0xFF bytes followed by the IP image in
which the fields a router may rewrite are forced to ones.  The result is
appended to the packet in little-endian byte order.

The kernel is table driven.  One table set T[k] (k < 64) gives the register
contribution of a byte followed by k zero bytes, so a chunk of L <= 64 bytes
is folded in a single step.  Three chunk shapes are used, mirroring a
hardware datapath: full 64-byte beats (vectorised with numpy across the
beats of a message), one 40-byte partial beat, and 4-byte words.  Any
trailing odd bytes are folded one at a time.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import TooShort

POLY = 0xEDB88320
MASK32 = 0xFFFFFFFF
BEAT = 64
PARTIAL_BEAT = 40
WORD = 4

IP_HEADER_LEN = 20
UDP_HEADER_LEN = 8
BTH_LEN = 12
MIN_IMAGE = IP_HEADER_LEN + UDP_HEADER_LEN + BTH_LEN

# byte offsets inside the IP image that are replaced by ones
_MASKED_OFFSETS = (
    1,  # DSCP / ECN
    8,  # TTL
    10, 11,  # IP header checksum
    26, 27,  # UDP checksum
    32,  # BTH reserved byte (FECN, BECN, resv6)
)


def _build_tables(n: int) -> list[list[int]]:
    t0 = []
    for b in range(256):
        c = b
        for _ in range(8):
            c = (c >> 1) ^ POLY if c & 1 else c >> 1
        t0.append(c)
    tables = [t0]
    for _ in range(1, n):
        prev = tables[-1]
        tables.append([(v >> 8) ^ t0[v & 0xFF] for v in prev])
    return tables


_TABLES = _build_tables(BEAT)
_T = np.array(_TABLES, dtype=np.uint32)
# row i of _REV64 is the table for byte i of a 64-byte beat
_REV64 = np.ascontiguousarray(_T[::-1]).ravel()
_REV40 = np.ascontiguousarray(_T[PARTIAL_BEAT - 1::-1]).ravel()
_IDX64 = np.arange(BEAT, dtype=np.intp) * 256
_IDX40 = np.arange(PARTIAL_BEAT, dtype=np.intp) * 256
_T0, _T1, _T2, _T3 = _TABLES[0], _TABLES[1], _TABLES[2], _TABLES[3]
_F64 = (_TABLES[63], _TABLES[62], _TABLES[61], _TABLES[60])
_F40 = (_TABLES[39], _TABLES[38], _TABLES[37], _TABLES[36])


@dataclass(frozen=True)
class IcrcState:
    """Running CRC register plus the number of bytes folded so far."""

    accumulator: int = MASK32
    bytes_consumed: int = 0

    def finalize(self) -> int:
        return self.accumulator ^ MASK32


def _fold_state(s: int, f) -> int:
    return f[0][s & 0xFF] ^ f[1][(s >> 8) & 0xFF] ^ f[2][(s >> 16) & 0xFF] ^ f[3][s >> 24]


def _beats(s: int, buf: np.ndarray) -> int:
    """Fold whole 64-byte beats.  Per-beat contributions are independent of
    the register, so they are computed for all beats at once."""
    beats = buf.reshape(-1, BEAT)
    contrib = np.bitwise_xor.reduce(_REV64.take(_IDX64 + beats), axis=1).tolist()
    f0, f1, f2, f3 = _F64
    for c in contrib:
        s = f0[s & 0xFF] ^ f1[(s >> 8) & 0xFF] ^ f2[(s >> 16) & 0xFF] ^ f3[s >> 24] ^ c
    return s


def _partial(s: int, buf: np.ndarray) -> int:
    c = int(np.bitwise_xor.reduce(_REV40.take(_IDX40 + buf)))
    return _fold_state(s, _F40) ^ c


def _words(s: int, data: bytes) -> int:
    for i in range(0, len(data), WORD):
        w = s ^ int.from_bytes(data[i:i + WORD], "little")
        s = _T3[w & 0xFF] ^ _T2[(w >> 8) & 0xFF] ^ _T1[(w >> 16) & 0xFF] ^ _T0[w >> 24]
    return s


def _bytes(s: int, data: bytes) -> int:
    for b in data:
        s = (s >> 8) ^ _T0[(s ^ b) & 0xFF]
    return s


def _fold(s: int, data) -> int:
    n = len(data)
    if n == 0:
        return s
    pos = 0
    nfull = n // BEAT
    if nfull:
        arr = np.frombuffer(data, dtype=np.uint8, count=nfull * BEAT)
        s = _beats(s, arr)
        pos = nfull * BEAT
    if n - pos >= PARTIAL_BEAT:
        arr = np.frombuffer(data, dtype=np.uint8, count=PARTIAL_BEAT, offset=pos)
        s = _partial(s, arr)
        pos += PARTIAL_BEAT
    nwords = (n - pos) // WORD
    if nwords:
        end = pos + nwords * WORD
        s = _words(s, bytes(data[pos:end]))
        pos = end
    if pos < n:
        s = _bytes(s, bytes(data[pos:]))
    return s


def icrc_update(state: IcrcState, chunk) -> IcrcState:
    """Fold ``chunk`` into ``state``.  Chunks may have any length; splitting
    a stream at arbitrary points yields the same final value."""
    return IcrcState(_fold(state.accumulator, chunk), state.bytes_consumed + len(chunk))


def crc32(data, state: IcrcState | None = None) -> int:
    """Plain CRC-32 of ``data`` (same value as zlib.crc32)."""
    st = state or IcrcState()
    return icrc_update(st, data).finalize()


_SEED = icrc_update(IcrcState(), b"\xff" * 8)


def masked_header(image) -> bytearray:
    """First 40 bytes of ``image`` with the variant fields forced to ones."""
    hdr = bytearray(image[:MIN_IMAGE])
    for off in _MASKED_OFFSETS:
        hdr[off] = 0xFF
    return hdr


def icrc_compute(image) -> int:
    """ICRC of an IP image that does not yet carry its trailer."""
    if len(image) < MIN_IMAGE:
        raise TooShort(f"image of {len(image)} bytes is shorter than IP+UDP+BTH")
    st = icrc_update(_SEED, masked_header(image))
    st = icrc_update(st, memoryview(image)[MIN_IMAGE:])
    return st.finalize()


def icrc_bytes(value: int) -> bytes:
    return (value & MASK32).to_bytes(4, "little")


def verify_image(image) -> bool:
    """Check the 4-byte trailer of a complete wire image."""
    if len(image) < MIN_IMAGE + 4:
        return False
    body = memoryview(image)[:-4]
    return icrc_bytes(icrc_compute(body)) == bytes(image[-4:])


def icrc_verify(packet) -> bool:
    """Recompute the ICRC of a parsed packet and compare with its field."""
    from .packet import serialize_packet

    if packet.icrc is None:
        return False
    image = serialize_packet(packet)
    return icrc_compute(memoryview(image)[:-4]) == packet.icrc
