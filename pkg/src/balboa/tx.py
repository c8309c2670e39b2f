"""Transmit pipeline: segmentation, header construction and ACK handling.

Messages are cut into MTU-sized segments carrying consecutive PSNs.  A
WRITE carries its RETH on the first segment only.  A READ request takes one
send PSN; the responder answers with READ RESPONSE segments from its own
send sequence, which the requester sees in its receive sequence.  ACKs are
cumulative; a sequence NAK names the PSN the receiver expects next.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Optional

from .packet import (
    AethHeader, BthHeader, Ipv4Header, Opcode, RethHeader, RocePacket, Syndrome, UdpHeader, is_ack, pad_for,
    serialize_packet, source_port,
)
from .qp import PendingMsg, QpContext, advance_tx, psn_add, psn_diff
from .rx import segments_for


class CommandKind(IntEnum):
    WRITE = 0
    READ_REQUEST = 1
    READ_RESPONSE = 2


@dataclass
class TxCommand:
    kind: CommandKind
    qpn: int
    wr_id: int
    length: int
    payload: bytes = b""
    remote_vaddr: int = 0
    rkey: int = 0
    local_offset: int = 0
    segments: int = 1
    next_segment: int = 0
    posted_at: int = 0
    message: Optional[PendingMsg] = field(default=None, repr=False)
    request_psn: int = 0  # READ_RESPONSE: PSN of the request served

    @property
    def remaining(self) -> int:
        return self.segments - self.next_segment

    @property
    def done(self) -> bool:
        return self.next_segment >= self.segments


def plan_write(qpn: int, wr_id: int, payload: bytes, remote_vaddr: int, rkey: int, mtu: int,
               local_offset: int = 0, now: int = 0) -> TxCommand:
    return TxCommand(CommandKind.WRITE, qpn, wr_id, len(payload), bytes(payload), remote_vaddr, rkey,
                     local_offset, segments_for(len(payload), mtu), posted_at=now)


def plan_read_request(qpn: int, wr_id: int, length: int, remote_vaddr: int, rkey: int,
                      local_offset: int, now: int = 0) -> TxCommand:
    return TxCommand(CommandKind.READ_REQUEST, qpn, wr_id, length, b"", remote_vaddr, rkey,
                     local_offset, 1, posted_at=now)


def plan_read_response(qpn: int, data: bytes, request_psn: int, mtu: int, now: int = 0) -> TxCommand:
    return TxCommand(CommandKind.READ_RESPONSE, qpn, 0, len(data), data, segments=segments_for(len(data), mtu),
                     posted_at=now, request_psn=request_psn)


_WRITE_OPS = (Opcode.RDMA_WRITE_ONLY, Opcode.RDMA_WRITE_FIRST, Opcode.RDMA_WRITE_MIDDLE, Opcode.RDMA_WRITE_LAST)
_RESP_OPS = (Opcode.RDMA_READ_RESPONSE_ONLY, Opcode.RDMA_READ_RESPONSE_FIRST,
             Opcode.RDMA_READ_RESPONSE_MIDDLE, Opcode.RDMA_READ_RESPONSE_LAST)


def _opcode(ops, seg: int, total: int) -> Opcode:
    if total == 1:
        return ops[0]
    if seg == 0:
        return ops[1]
    return ops[3] if seg == total - 1 else ops[2]


def _packet(ctx: QpContext, local_ip: str, opcode: int, psn: int, payload: bytes = b"",
            reth=None, aeth=None, ack_request: bool = False) -> RocePacket:
    conn = ctx.connection
    pad = pad_for(len(payload))
    return RocePacket(
        ip=Ipv4Header(src=local_ip, dst=conn.remote_ip),
        udp=UdpHeader(src_port=source_port(conn.local_qpn)),
        bth=BthHeader(opcode=opcode, dest_qpn=conn.remote_qpn, psn=psn, pad_count=pad,
                      ack_request=int(ack_request)),
        reth=reth, aeth=aeth,
        payload=payload + b"\x00" * pad if pad else payload,
    )


def tx_build(cmd: TxCommand, ctx: QpContext, n_packets: int, mtu: int, local_ip: str) -> list:
    """Build the next ``n_packets`` segments of ``cmd`` as (psn, image)
    pairs, reserving their PSNs.  The final packet of the batch requests an
    acknowledgement so that budget returns even mid-message."""
    n = min(n_packets, cmd.remaining)
    first = advance_tx(ctx, n)
    out = []
    for i in range(n):
        seg = cmd.next_segment + i
        psn = psn_add(first, i)
        ackreq = i == n - 1
        if cmd.kind == CommandKind.READ_REQUEST:
            pkt = _packet(ctx, local_ip, Opcode.RDMA_READ_REQUEST, psn,
                          reth=RethHeader(cmd.remote_vaddr, cmd.rkey, cmd.length), ack_request=True)
        else:
            chunk = cmd.payload[seg * mtu:(seg + 1) * mtu]
            if cmd.kind == CommandKind.WRITE:
                op = _opcode(_WRITE_OPS, seg, cmd.segments)
                reth = RethHeader(cmd.remote_vaddr, cmd.rkey, cmd.length) if seg == 0 else None
                pkt = _packet(ctx, local_ip, op, psn, chunk, reth=reth, ack_request=ackreq)
            else:
                op = _opcode(_RESP_OPS, seg, cmd.segments)
                aeth = None
                if op != Opcode.RDMA_READ_RESPONSE_MIDDLE:
                    aeth = AethHeader(Syndrome.ACK, ctx.msn_rx.msn)
                pkt = _packet(ctx, local_ip, op, psn, chunk, aeth=aeth, ack_request=ackreq)
        out.append((psn, serialize_packet(pkt)))
    if cmd.next_segment == 0:
        cmd.message = PendingMsg(cmd.wr_id, cmd.kind, first, length=cmd.length, posted_at=cmd.posted_at)
        ctx.pending.append(cmd.message)
    cmd.next_segment += n
    if cmd.done:
        cmd.message.last_psn = psn_add(first, n - 1)
    return out


def build_ack(ctx: QpContext, local_ip: str, psn: int, syndrome: int, msn: int) -> bytes:
    return serialize_packet(_packet(ctx, local_ip, Opcode.ACKNOWLEDGE, psn, aeth=AethHeader(syndrome, msn)))


@dataclass
class AckOutcome:
    retired: int = 0
    completed: list = field(default_factory=list)  # PendingMsg acknowledged in full
    failed: list = field(default_factory=list)  # PendingMsg rejected by the responder
    replay_from: Optional[int] = None
    stale: bool = False


def retire(ctx: QpContext, acked_psn: int, out: AckOutcome) -> int:
    """Advance the cumulative acknowledgement to ``acked_psn``."""
    st = ctx.psn_state
    k = psn_diff(acked_psn, st.last_acked_psn)
    if k == 0 or k > st.unacked:
        return 0
    old = st.last_acked_psn
    st.last_acked_psn = acked_psn
    keep = []
    for m in ctx.pending:
        if m.last_psn is not None and 1 <= psn_diff(m.last_psn, old) <= k:
            out.completed.append(m)
        else:
            keep.append(m)
    if len(keep) != len(ctx.pending):
        ctx.pending.clear()
        ctx.pending.extend(keep)
    out.retired += k
    return k


def _message_at(ctx: QpContext, psn: int) -> Optional[PendingMsg]:
    inside = None
    for m in ctx.pending:
        if m.first_psn == psn:
            return m
        last = m.last_psn if m.last_psn is not None else psn_add(ctx.psn_state.next_send_psn, -1)
        if inside is None and psn_diff(psn, m.first_psn) <= psn_diff(last, m.first_psn):
            inside = m
    return inside


def on_ack(ctx: QpContext, psn: int, aeth: AethHeader) -> AckOutcome:
    """Apply an inbound ACK or NAK to the sender state of ``ctx``."""
    out = AckOutcome()
    st = ctx.psn_state
    syn = aeth.syndrome
    if is_ack(syn):
        if retire(ctx, psn, out) == 0:
            out.stale = True
        else:
            ctx.msn_tx.msn = aeth.msn
        return out
    if syn == Syndrome.NAK_SEQUENCE:
        upto = psn_add(psn, -1)
        d = psn_diff(upto, st.last_acked_psn)
        if d > st.unacked or (psn == st.last_nak_psn and d == 0):
            out.stale = True
            return out
        retire(ctx, upto, out)
        st.last_nak_psn = psn
        if st.unacked:
            out.replay_from = psn
        return out
    # remote access / invalid request: the responder consumed ``psn``
    d = psn_diff(psn, st.last_acked_psn)
    if d == 0 or d > st.unacked:
        out.stale = True
        return out
    m = _message_at(ctx, psn)
    if m is not None and not m.failed:
        m.failed = True
        out.failed.append(m)
    retire(ctx, psn, out)
    return out
