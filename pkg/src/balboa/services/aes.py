"""AES-128 in ECB mode, vectorised across blocks.

ECB blocks are independent, so a whole payload is processed as one numpy
array of 32-bit state columns using the usual T-table formulation.  Keys
come from the per-QP connection entry.
"""
from __future__ import annotations

from typing import Optional

import numpy as np

from ..errors import BadLength, NoKey
from .base import BlockStream, Direction, OnPathService

BLOCK = 16
ROUNDS = 10


def _xtime(b: int) -> int:
    b <<= 1
    return (b ^ 0x11B) & 0xFF if b & 0x100 else b


def _gmul(a: int, b: int) -> int:
    r = 0
    while b:
        if b & 1:
            r ^= a
        a = _xtime(a)
        b >>= 1
    return r


def _make_sbox() -> tuple[list[int], list[int]]:
    inv = [0] * 256
    for a in range(1, 256):
        for b in range(1, 256):
            if _gmul(a, b) == 1:
                inv[a] = b
                break
    sbox = []
    for x in range(256):
        v = inv[x]
        s = v
        for sh in range(1, 5):
            s ^= ((v << sh) | (v >> (8 - sh))) & 0xFF
        sbox.append(s ^ 0x63)
    inv_sbox = [0] * 256
    for i, s in enumerate(sbox):
        inv_sbox[s] = i
    return sbox, inv_sbox


SBOX, INV_SBOX = _make_sbox()


def _ror(w: int, n: int) -> int:
    return ((w >> n) | (w << (32 - n))) & 0xFFFFFFFF


def _tables():
    te0 = []
    td0 = []
    for x in range(256):
        s = SBOX[x]
        te0.append(_gmul(s, 2) << 24 | s << 16 | s << 8 | _gmul(s, 3))
        si = INV_SBOX[x]
        td0.append(_gmul(si, 14) << 24 | _gmul(si, 9) << 16 | _gmul(si, 13) << 8 | _gmul(si, 11))
    te = [te0] + [[_ror(w, 8 * k) for w in te0] for k in (1, 2, 3)]
    td = [td0] + [[_ror(w, 8 * k) for w in td0] for k in (1, 2, 3)]
    return te, td


_TE, _TD = _tables()
_TE_NP = [np.array(t, dtype=np.uint32) for t in _TE]
_TD_NP = [np.array(t, dtype=np.uint32) for t in _TD]
_S_NP = np.array(SBOX, dtype=np.uint32)
_SI_NP = np.array(INV_SBOX, dtype=np.uint32)
_RCON = [0x01, 0x02, 0x04, 0x08, 0x10, 0x20, 0x40, 0x80, 0x1B, 0x36]


def expand_key(key: bytes) -> list[int]:
    """44 round-key words for AES-128."""
    if key is None:
        raise NoKey("no AES key configured")
    if len(key) != 16:
        raise BadLength(f"AES-128 key must be 16 bytes, got {len(key)}")
    w = [int.from_bytes(key[i:i + 4], "big") for i in range(0, 16, 4)]
    for i in range(4, 44):
        t = w[i - 1]
        if i % 4 == 0:
            t = ((t << 8) | (t >> 24)) & 0xFFFFFFFF
            t = (SBOX[t >> 24] << 24 | SBOX[(t >> 16) & 0xFF] << 16
                 | SBOX[(t >> 8) & 0xFF] << 8 | SBOX[t & 0xFF])
            t ^= _RCON[i // 4 - 1] << 24
        w.append(w[i - 4] ^ t)
    return w


def _inv_mix(w: int) -> int:
    return (_TD[0][SBOX[w >> 24]] ^ _TD[1][SBOX[(w >> 16) & 0xFF]]
            ^ _TD[2][SBOX[(w >> 8) & 0xFF]] ^ _TD[3][SBOX[w & 0xFF]])


def decryption_keys(rk: list[int]) -> list[int]:
    out = list(rk[40:44])
    for r in range(1, ROUNDS):
        out.extend(_inv_mix(x) for x in rk[40 - 4 * r:44 - 4 * r])
    out.extend(rk[0:4])
    return out


def _columns(data) -> list[np.ndarray]:
    if len(data) % BLOCK:
        raise BadLength(f"ECB input of {len(data)} bytes is not a multiple of {BLOCK}")
    a = np.frombuffer(bytes(data), dtype=">u4").astype(np.uint32).reshape(-1, 4)
    return [a[:, i].copy() for i in range(4)]


def _pack(cols) -> bytes:
    return np.stack(cols, axis=1).astype(">u4").tobytes()


_FF = np.uint32(0xFF)


def _encrypt_cols(s, rk):
    t0_, t1_, t2_, t3_ = _TE_NP
    s0, s1, s2, s3 = (s[i] ^ np.uint32(rk[i]) for i in range(4))
    for r in range(1, ROUNDS):
        k = 4 * r
        n0 = t0_[s0 >> 24] ^ t1_[(s1 >> 16) & _FF] ^ t2_[(s2 >> 8) & _FF] ^ t3_[s3 & _FF] ^ np.uint32(rk[k])
        n1 = t0_[s1 >> 24] ^ t1_[(s2 >> 16) & _FF] ^ t2_[(s3 >> 8) & _FF] ^ t3_[s0 & _FF] ^ np.uint32(rk[k + 1])
        n2 = t0_[s2 >> 24] ^ t1_[(s3 >> 16) & _FF] ^ t2_[(s0 >> 8) & _FF] ^ t3_[s1 & _FF] ^ np.uint32(rk[k + 2])
        n3 = t0_[s3 >> 24] ^ t1_[(s0 >> 16) & _FF] ^ t2_[(s1 >> 8) & _FF] ^ t3_[s2 & _FF] ^ np.uint32(rk[k + 3])
        s0, s1, s2, s3 = n0, n1, n2, n3
    sb = _S_NP
    order = ((s0, s1, s2, s3), (s1, s2, s3, s0), (s2, s3, s0, s1), (s3, s0, s1, s2))
    out = []
    for i, (a, b, c, d) in enumerate(order):
        w = (sb[a >> 24] << 24) | (sb[(b >> 16) & _FF] << 16) | (sb[(c >> 8) & _FF] << 8) | sb[d & _FF]
        out.append(w ^ np.uint32(rk[40 + i]))
    return out


def _decrypt_cols(s, drk):
    t0_, t1_, t2_, t3_ = _TD_NP
    s0, s1, s2, s3 = (s[i] ^ np.uint32(drk[i]) for i in range(4))
    for r in range(1, ROUNDS):
        k = 4 * r
        n0 = t0_[s0 >> 24] ^ t1_[(s3 >> 16) & _FF] ^ t2_[(s2 >> 8) & _FF] ^ t3_[s1 & _FF] ^ np.uint32(drk[k])
        n1 = t0_[s1 >> 24] ^ t1_[(s0 >> 16) & _FF] ^ t2_[(s3 >> 8) & _FF] ^ t3_[s2 & _FF] ^ np.uint32(drk[k + 1])
        n2 = t0_[s2 >> 24] ^ t1_[(s1 >> 16) & _FF] ^ t2_[(s0 >> 8) & _FF] ^ t3_[s3 & _FF] ^ np.uint32(drk[k + 2])
        n3 = t0_[s3 >> 24] ^ t1_[(s2 >> 16) & _FF] ^ t2_[(s1 >> 8) & _FF] ^ t3_[s0 & _FF] ^ np.uint32(drk[k + 3])
        s0, s1, s2, s3 = n0, n1, n2, n3
    si = _SI_NP
    order = ((s0, s3, s2, s1), (s1, s0, s3, s2), (s2, s1, s0, s3), (s3, s2, s1, s0))
    out = []
    for i, (a, b, c, d) in enumerate(order):
        w = (si[a >> 24] << 24) | (si[(b >> 16) & _FF] << 16) | (si[(c >> 8) & _FF] << 8) | si[d & _FF]
        out.append(w ^ np.uint32(drk[40 + i]))
    return out


class Aes128:
    """Key-scheduled AES-128 ECB cipher."""

    def __init__(self, key: bytes):
        self.key = bytes(key) if key is not None else None
        self._rk = expand_key(self.key)
        self._drk = decryption_keys(self._rk)

    def encrypt(self, data) -> bytes:
        if not len(data):
            return b""
        return _pack(_encrypt_cols(_columns(data), self._rk))

    def decrypt(self, data) -> bytes:
        if not len(data):
            return b""
        return _pack(_decrypt_cols(_columns(data), self._drk))


def aes_encrypt(key: bytes, data) -> bytes:
    return Aes128(key).encrypt(data)


def aes_decrypt(key: bytes, data) -> bytes:
    return Aes128(key).decrypt(data)


class AesService(OnPathService):
    """Encrypts on TX and decrypts on RX with the QP's key."""

    name = "aes"
    expansion_factor = 1.0

    def __init__(self, direction: Direction = Direction.BOTH):
        self.direction = direction
        self._ciphers: dict[bytes, Aes128] = {}

    def cipher(self, key: Optional[bytes]) -> Aes128:
        if key is None:
            raise NoKey("QP has no AES key")
        c = self._ciphers.get(key)
        if c is None:
            c = self._ciphers[key] = Aes128(key)
        return c

    def open(self, ctx, direction: Direction):
        c = self.cipher(ctx.connection.aes_key)
        fn = c.encrypt if direction == Direction.TX else c.decrypt

        def residue(n: int) -> None:
            raise BadLength(f"{n} trailing bytes do not fill an AES block")

        return BlockStream(BLOCK, fn, residue)
