"""DLRM feature preprocessing on a stream of fixed-width records.

A record holds 13 dense float32 features followed by 26 sparse uint32
categorical ids, little-endian, 156 bytes in total.  Dense values become
log(1 + max(x, 0)) computed in double precision and rounded to float32;
``max`` here maps negatives, -0.0 and NaN to +0.0.  Sparse ids are reduced
modulo a per-column table size.  Records are independent, so the stream is
processed in place with at most one partial record carried between packets.
"""
from __future__ import annotations

import math
from typing import Sequence, Union

import numpy as np

from ..errors import MisalignedStream, ZeroModulus
from .base import BlockStream, Direction, OnPathService

N_DENSE = 13
N_SPARSE = 26
RECORD_WIDTH = 4 * (N_DENSE + N_SPARSE)
DEFAULT_MODULUS = 1 << 20

RECORD_DTYPE = np.dtype([("dense", "<f4", (N_DENSE,)), ("sparse", "<u4", (N_SPARSE,))])
assert RECORD_DTYPE.itemsize == RECORD_WIDTH


def neg2zero(x: float) -> float:
    return x if x > 0 else 0.0


def log_transform(x: float) -> float:
    return math.log1p(neg2zero(x))


def hex_modulus(v: int, n: int) -> int:
    if n <= 0:
        raise ZeroModulus("modulus must be positive")
    return v % n


Moduli = Union[int, Sequence[int]]


def _moduli(moduli: Moduli) -> np.ndarray:
    m = np.full(N_SPARSE, moduli, dtype=np.int64) if np.isscalar(moduli) else np.asarray(moduli, dtype=np.int64)
    if m.shape != (N_SPARSE,):
        raise ValueError(f"expected {N_SPARSE} moduli")
    if (m <= 0).any():
        raise ZeroModulus("every sparse column needs a positive modulus")
    if (m > 1 << 32).any():
        raise ValueError("modulus exceeds the uint32 range")
    return m.astype(np.uint64)


def preprocess_records(data, moduli: Moduli = DEFAULT_MODULUS) -> bytes:
    """Transform a whole number of records."""
    if len(data) % RECORD_WIDTH:
        raise MisalignedStream(f"{len(data)} bytes is not a multiple of {RECORD_WIDTH}")
    m = _moduli(moduli)
    if not len(data):
        return b""
    rec = np.frombuffer(bytes(data), dtype=RECORD_DTYPE)
    out = np.empty_like(rec)
    dense = rec["dense"].astype(np.float64)
    dense = np.where(dense > 0, dense, 0.0)
    out["dense"] = np.log1p(dense).astype(np.float32)
    out["sparse"] = (rec["sparse"].astype(np.uint64) % m).astype(np.uint32)
    return out.tobytes()


class DlrmService(OnPathService):
    name = "dlrm_preproc"
    direction = Direction.RX
    expansion_factor = 1.0

    def __init__(self, moduli: Moduli = DEFAULT_MODULUS):
        _moduli(moduli)
        self.moduli = moduli
        self.residue_errors = 0

    def open(self, ctx, direction: Direction):
        def residue(n: int) -> None:
            self.residue_errors += 1
            raise MisalignedStream(f"message ends with {n} bytes of a partial record")

        return BlockStream(RECORD_WIDTH, lambda b: preprocess_records(b, self.moduli), residue)
