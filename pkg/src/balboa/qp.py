"""Queue-pair state: connection table, PSN bookkeeping and MSN tracking.

PSNs live in a 24-bit circular space.  An incoming PSN is in order when it
equals the expected value, a duplicate when it lies in the half window of
2**23 values behind it, and a sequence error otherwise.
"""
from __future__ import annotations

import random
from collections import deque
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Optional

import numpy as np

from .errors import DuplicateQpn, TableFull, UnknownQpn
from .flow import QpBudget

PSN_BITS = 24
PSN_MOD = 1 << PSN_BITS
PSN_MASK = PSN_MOD - 1
HALF_WINDOW = 1 << (PSN_BITS - 1)
DEFAULT_QP_CAPACITY = 500


class PsnClass(IntEnum):
    IN_ORDER = 0
    DUPLICATE = 1
    SEQUENCE_ERROR = 2


def psn_add(psn: int, n: int) -> int:
    return (psn + n) & PSN_MASK


def psn_diff(a: int, b: int) -> int:
    """Forward distance from b to a in the circular space."""
    return (a - b) & PSN_MASK


def classify_psn(expected, incoming):
    """Classify ``incoming`` against ``expected``.  Works element-wise on
    numpy arrays, returning an array of PsnClass codes."""
    d = (expected - incoming) & PSN_MASK
    if isinstance(d, np.ndarray):
        return ((d != 0).astype(np.int8) + (d > HALF_WINDOW).astype(np.int8))
    if d == 0:
        return PsnClass.IN_ORDER
    return PsnClass.DUPLICATE if d <= HALF_WINDOW else PsnClass.SEQUENCE_ERROR


@dataclass
class QpConnection:
    local_qpn: int
    remote_qpn: int
    remote_ip: str
    remote_udp_port: int
    local_rkey: int = 0
    remote_rkey: int = 0
    remote_vaddr: int = 0
    remote_size: int = 0
    aes_key: Optional[bytes] = None


@dataclass
class QpPsnState:
    next_send_psn: int
    expected_rx_psn: int
    last_acked_psn: int
    retry_count: int = 0
    outstanding_budget: QpBudget = field(default_factory=QpBudget)
    nak_pending: bool = False  # a sequence NAK was sent and not yet resolved
    last_nak_psn: int = -1  # last sequence NAK acted upon by the sender

    @property
    def unacked(self) -> int:
        return psn_diff(self.next_send_psn, psn_add(self.last_acked_psn, 1))


@dataclass
class MsnEntry:
    """Message progress for one direction.  ``msn`` counts completed
    messages; the remaining fields describe the message being reassembled."""

    msn: int = 0
    active: bool = False
    base_vaddr: int = 0
    length: int = 0
    bytes_received: int = 0
    delivered: int = 0  # bytes written after on-path transforms
    first_psn: int = 0
    discard: bool = False
    malicious: bool = False
    score: float = 0.0


@dataclass
class ReadTracker:
    """Requester-side record of an outstanding RDMA READ."""

    wr_id: int
    local_offset: int
    length: int
    request_psn: int
    segments: int
    received: int = 0
    delivered: int = 0
    started: bool = False
    malicious: bool = False
    score: float = 0.0
    posted_at: int = 0
    reported: bool = False


@dataclass
class PendingMsg:
    """Sender-side record of a message whose packets are not all acknowledged."""

    wr_id: int
    kind: int  # tx.CommandKind
    first_psn: int
    last_psn: Optional[int] = None  # known once the final segment is built
    length: int = 0
    failed: bool = False
    reported: bool = False
    posted_at: int = 0


@dataclass
class QpContext:
    connection: QpConnection
    psn_state: QpPsnState
    msn_tx: MsnEntry = field(default_factory=MsnEntry)
    msn_rx: MsnEntry = field(default_factory=MsnEntry)
    reads: deque = field(default_factory=deque)  # ReadTracker, request order
    pending: deque = field(default_factory=deque)  # PendingMsg, PSN order
    failed: bool = False

    @property
    def qpn(self) -> int:
        return self.connection.local_qpn


def psn_check(ctx: QpContext, incoming):
    return classify_psn(ctx.psn_state.expected_rx_psn, incoming)


def advance_rx(ctx: QpContext, message_complete: bool) -> None:
    st = ctx.psn_state
    st.expected_rx_psn = psn_add(st.expected_rx_psn, 1)
    if message_complete:
        ctx.msn_rx.msn = (ctx.msn_rx.msn + 1) & PSN_MASK


def advance_tx(ctx: QpContext, n_packets: int) -> int:
    """Reserve ``n_packets`` consecutive send PSNs; returns the first."""
    st = ctx.psn_state
    first = st.next_send_psn
    st.next_send_psn = psn_add(first, n_packets)
    return first


class QpTable:
    """Bounded table of queue pairs keyed by local QPN."""

    def __init__(self, capacity: int = DEFAULT_QP_CAPACITY, seed: int = 0, max_outstanding: int = 128):
        self.capacity = capacity
        self.max_outstanding = max_outstanding
        self._rng = random.Random(seed)
        self._qps: dict[int, QpContext] = {}
        self._next_qpn = 0x11

    def __len__(self) -> int:
        return len(self._qps)

    def __contains__(self, qpn: int) -> bool:
        return qpn in self._qps

    def __iter__(self):
        return iter(list(self._qps.values()))

    def random_psn(self) -> int:
        return self._rng.getrandbits(PSN_BITS)

    def allocate_qpn(self) -> int:
        while self._next_qpn in self._qps or self._next_qpn == 0:
            self._next_qpn = (self._next_qpn + 1) & 0xFFFFFF
        qpn = self._next_qpn
        self._next_qpn = (qpn + 1) & 0xFFFFFF
        return qpn

    def create_qp(self, conn: QpConnection, send_psn: Optional[int] = None,
                  expected_psn: Optional[int] = None) -> QpContext:
        if conn.local_qpn in self._qps:
            raise DuplicateQpn(f"QPN 0x{conn.local_qpn:06x} already exists")
        if len(self._qps) >= self.capacity:
            raise TableFull(f"QP table holds {self.capacity} entries")
        if send_psn is None:
            send_psn = self.random_psn()
        st = QpPsnState(
            next_send_psn=send_psn & PSN_MASK,
            expected_rx_psn=(expected_psn if expected_psn is not None else 0) & PSN_MASK,
            last_acked_psn=psn_add(send_psn, -1),
            outstanding_budget=QpBudget(self.max_outstanding),
        )
        ctx = QpContext(connection=conn, psn_state=st)
        self._qps[conn.local_qpn] = ctx
        return ctx

    def lookup(self, qpn: int) -> QpContext:
        try:
            return self._qps[qpn]
        except KeyError:
            raise UnknownQpn(f"QPN 0x{qpn:06x}") from None

    def get(self, qpn: int) -> Optional[QpContext]:
        return self._qps.get(qpn)

    def destroy(self, qpn: int) -> QpContext:
        ctx = self.lookup(qpn)
        del self._qps[qpn]
        return ctx
