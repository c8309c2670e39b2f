"""Receive pipeline: PSN validation, WRITE reassembly and READ serving.

``rx_process`` is the per-packet state machine of a QP.  It classifies the
packet's PSN, checks receive credits and memory access rights, and returns
the actions the engine must carry out (deliver, acknowledge, serve a read,
drop).  State only advances for accepted packets.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Optional, Union

from .flow import CreditPool
from .packet import OPCODE_INFO, AethHeader, Opcode, RocePacket, Syndrome
from .qp import PsnClass, QpContext, ReadTracker, advance_rx, psn_add, psn_check
from .services.delivery import MemoryRegion


class Oper(IntEnum):
    LOCAL_WRITE = 0  # inbound WRITE delivered into local memory
    LOCAL_READ = 1  # inbound READ served from local memory
    REMOTE_RDMA_WRITE = 2
    REMOTE_RDMA_READ = 3


class Status(IntEnum):
    OK = 0
    NAK = 1
    TIMEOUT_EXHAUSTED = 2


class DropReason(IntEnum):
    NO_CREDIT = 0
    OUT_OF_SEQUENCE = 1
    UNKNOWN_QPN = 2
    BAD_ICRC = 3
    MALFORMED = 4
    UNEXPECTED = 5
    QP_FAILED = 6


class DeliveryKind(IntEnum):
    WRITE = 0
    READ_RESPONSE = 1


@dataclass
class DeliveryCommand:
    qpn: int
    kind: DeliveryKind
    offset: int  # byte offset in the local region
    payload: bytes
    msg_offset: int = 0  # offset of this chunk inside its message
    last: bool = False
    malicious_flag: bool = False
    score: float = 0.0
    wr_id: int = 0  # READ: requester work request; WRITE: MSN of the message
    msg_base: int = 0  # region offset of message byte 0
    msg_length: int = 0
    tracker: Optional[ReadTracker] = field(default=None, repr=False, compare=False)


@dataclass
class CompletionEvent:
    qpn: int
    oper: Oper
    wr_id: int
    length: int
    status: Status = Status.OK
    malicious: bool = False
    score: float = 0.0
    offset: int = 0
    timestamp: int = 0
    posted_at: int = 0


@dataclass
class ReadResponsePlan:
    """Data snapshot for one READ, taken when the request is accepted."""

    qpn: int
    data: bytes
    segments: int
    request_psn: int


@dataclass
class Deliver:
    cmd: DeliveryCommand


@dataclass
class SendAck:
    psn: int
    syndrome: int
    msn: int


@dataclass
class Drop:
    reason: DropReason


@dataclass
class ServeRead:
    plan: ReadResponsePlan


@dataclass
class AckIn:
    """An inbound ACK or NAK, handed to the transmit side."""

    psn: int
    aeth: AethHeader


@dataclass
class RetireTo:
    """Implicit acknowledgement: a READ response proves the request arrived."""

    psn: int


@dataclass
class ReadFailed:
    tracker: ReadTracker


Action = Union[Deliver, SendAck, Drop, ServeRead, AckIn, RetireTo, ReadFailed]


class RxFault(Exception):
    def __init__(self, syndrome: Syndrome, why: str):
        super().__init__(why)
        self.syndrome = syndrome


class RkeyMismatch(RxFault):
    def __init__(self, why="rkey mismatch"):
        super().__init__(Syndrome.NAK_REMOTE_ACCESS, why)


class BoundsViolation(RxFault):
    def __init__(self, why="access outside registered region"):
        super().__init__(Syndrome.NAK_REMOTE_ACCESS, why)


class MessageOverrun(RxFault):
    def __init__(self, why="payload exceeds declared length"):
        super().__init__(Syndrome.NAK_INVALID_REQUEST, why)


class BadSequence(RxFault):
    def __init__(self, why="opcode out of message sequence"):
        super().__init__(Syndrome.NAK_INVALID_REQUEST, why)


def segments_for(length: int, mtu: int) -> int:
    return max(1, -(-length // mtu))


def _check_access(region: Optional[MemoryRegion], vaddr: int, rkey: int, length: int) -> None:
    if region is None or rkey != region.rkey:
        raise RkeyMismatch()
    if length < 0 or not region.contains(vaddr, length):
        raise BoundsViolation()


def reassemble_write(ctx: QpContext, p: RocePacket, region: Optional[MemoryRegion]) -> Optional[DeliveryCommand]:
    """Place one in-order WRITE packet.  Returns the delivery command, or
    None while the rest of a failed message is being discarded."""
    info = OPCODE_INFO[p.bth.opcode]
    m = ctx.msn_rx
    data = p.logical_payload
    if info.is_first:
        if m.active and not m.discard:
            raise BadSequence("new WRITE before the previous one finished")
        m.active, m.discard = True, False
        m.bytes_received = m.delivered = 0
        m.malicious, m.score = False, 0.0
        m.first_psn = p.bth.psn
        reth = p.reth
        try:
            _check_access(region, reth.virtual_address, reth.rkey, reth.dma_length)
            if len(data) > reth.dma_length or (info.is_last and len(data) != reth.dma_length):
                raise MessageOverrun()
        except RxFault:
            m.discard = not info.is_last
            m.active = not info.is_last
            raise
        m.base_vaddr = reth.virtual_address
        m.length = reth.dma_length
    else:
        if not m.active:
            raise BadSequence("WRITE continuation without a FIRST packet")
        if m.discard:
            if info.is_last:
                m.active = m.discard = False
            return None
        end = m.bytes_received + len(data)
        if end > m.length or (info.is_last and end != m.length):
            m.discard = not info.is_last
            m.active = not info.is_last
            raise MessageOverrun()
    base = region.offset_of(m.base_vaddr)
    cmd = DeliveryCommand(
        qpn=ctx.qpn, kind=DeliveryKind.WRITE, offset=base + m.bytes_received, payload=data,
        msg_offset=m.bytes_received, last=info.is_last, wr_id=m.msn, msg_base=base, msg_length=m.length,
    )
    m.bytes_received += len(data)
    if info.is_last:
        m.active = False
    return cmd


def _read_response(ctx: QpContext, p: RocePacket) -> tuple[DeliveryCommand, ReadTracker]:
    info = OPCODE_INFO[p.bth.opcode]
    if not ctx.reads:
        raise BadSequence("READ response without an outstanding request")
    t: ReadTracker = ctx.reads[0]
    data = p.logical_payload
    if info.is_first == t.started:
        raise BadSequence("READ response segment out of order")
    end = t.received + len(data)
    if end > t.length or (info.is_last and end != t.length):
        raise MessageOverrun("READ response longer than requested")
    t.started = True
    cmd = DeliveryCommand(
        qpn=ctx.qpn, kind=DeliveryKind.READ_RESPONSE, offset=t.local_offset + t.received, payload=data,
        msg_offset=t.received, last=info.is_last, wr_id=t.wr_id, msg_base=t.local_offset, msg_length=t.length,
        tracker=t,
    )
    t.received = end
    return cmd, t


def responder_read(ctx: QpContext, p: RocePacket, region: Optional[MemoryRegion], mtu: int) -> ReadResponsePlan:
    reth = p.reth
    _check_access(region, reth.virtual_address, reth.rkey, reth.dma_length)
    off = region.offset_of(reth.virtual_address)
    data = region.read(off, reth.dma_length)
    return ReadResponsePlan(ctx.qpn, data, segments_for(len(data), mtu), p.bth.psn)


def _ack_current(ctx: QpContext) -> SendAck:
    st = ctx.psn_state
    return SendAck(psn_add(st.expected_rx_psn, -1), Syndrome.ACK, ctx.msn_rx.msn)


def rx_process(p: RocePacket, ctx: QpContext, credits: CreditPool,
               region: Optional[MemoryRegion] = None, mtu: int = 4096) -> list:
    """Run one validated packet through the QP state machine."""
    op = p.bth.opcode
    if op == Opcode.ACKNOWLEDGE:
        return [AckIn(p.bth.psn, p.aeth)]
    info = OPCODE_INFO[op]
    st = ctx.psn_state
    cls = psn_check(ctx, p.bth.psn)
    if cls == PsnClass.DUPLICATE:
        return [_ack_current(ctx)]
    if info.has_payload and credits.available <= 0:
        credits.exhausted_drops += 1
        return [Drop(DropReason.NO_CREDIT)]
    if cls == PsnClass.SEQUENCE_ERROR:
        if st.nak_pending:
            return [Drop(DropReason.OUT_OF_SEQUENCE)]
        st.nak_pending = True
        return [SendAck(st.expected_rx_psn, Syndrome.NAK_SEQUENCE, ctx.msn_rx.msn)]
    st.nak_pending = False
    psn = p.bth.psn
    out: list = []
    try:
        if info.is_write:
            cmd = reassemble_write(ctx, p, region)
            advance_rx(ctx, info.is_last)
            if cmd is not None:
                credits.available -= 1
                out.append(Deliver(cmd))
        elif op == Opcode.RDMA_READ_REQUEST:
            plan = responder_read(ctx, p, region, mtu)
            advance_rx(ctx, True)
            out.append(ServeRead(plan))
        else:
            cmd, tracker = _read_response(ctx, p)
            advance_rx(ctx, info.is_last)
            if info.is_first:
                out.append(RetireTo(tracker.request_psn))
            credits.available -= 1
            out.append(Deliver(cmd))
            if info.is_last:
                ctx.reads.popleft()
    except RxFault as fault:
        advance_rx(ctx, info.is_last)
        out = [SendAck(psn, fault.syndrome, ctx.msn_rx.msn)]
        if info.is_read_response and ctx.reads:
            out.append(ReadFailed(ctx.reads.popleft()))
        return out
    if info.is_last or p.bth.ack_request or op == Opcode.RDMA_READ_REQUEST:
        out.append(SendAck(psn, Syndrome.ACK, ctx.msn_rx.msn))
    return out
