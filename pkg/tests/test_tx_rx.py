from __future__ import annotations

import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from balboa.flow import CreditPool
from balboa.packet import OPCODE_INFO, AethHeader, Opcode, Syndrome, parse_packet
from balboa.qp import QpConnection, QpTable, ReadTracker
from balboa.rx import AckIn, Deliver, Drop, DropReason, RetireTo, SendAck, ServeRead, rx_process
from balboa.services.delivery import MemoryRegion
from balboa.tx import build_ack, on_ack, plan_read_request, plan_read_response, plan_write, tx_build
from oracles import segment_reference

MTU = 4096
RKEY = 0x77
VADDR = 0x10_0000


def _ctxs(psn_a=1000, psn_b=5000):
    t = QpTable()
    a = t.create_qp(QpConnection(0x11, 0x22, "10.0.0.2", 4791, remote_rkey=RKEY), send_psn=psn_a, expected_psn=psn_b)
    b = t.create_qp(QpConnection(0x22, 0x11, "10.0.0.1", 4791, local_rkey=RKEY), send_psn=psn_b, expected_psn=psn_a)
    return a, b


def _write_packets(a, length, n=10**6, seed=0):
    data = random.Random(seed).randbytes(length)
    cmd = plan_write(a.qpn, 1, data, VADDR, RKEY, MTU)
    return data, cmd, [parse_packet(img) for _, img in tx_build(cmd, a, n, MTU, "10.0.0.1")]


@pytest.mark.parametrize("length, ops", [
    (8192, [Opcode.RDMA_WRITE_FIRST, Opcode.RDMA_WRITE_LAST]),
    (4096, [Opcode.RDMA_WRITE_ONLY]),
    (4097, [Opcode.RDMA_WRITE_FIRST, Opcode.RDMA_WRITE_LAST]),
    (32768, [Opcode.RDMA_WRITE_FIRST] + [Opcode.RDMA_WRITE_MIDDLE] * 6 + [Opcode.RDMA_WRITE_LAST]),
    (0, [Opcode.RDMA_WRITE_ONLY]),
])
def test_write_segmentation(length, ops):
    a, _ = _ctxs()
    data, _, pkts = _write_packets(a, length)
    assert [p.bth.opcode for p in pkts] == ops
    assert [(len(p.logical_payload), p.bth.pad_count) for p in pkts] == segment_reference(length, MTU)
    assert sum(p.reth is not None for p in pkts) == 1 and pkts[0].reth.dma_length == length
    assert [p.bth.psn for p in pkts] == list(range(1000, 1000 + len(ops)))
    assert b"".join(p.logical_payload for p in pkts) == data


def test_4097_tail_is_padded():
    a, _ = _ctxs()
    _, _, pkts = _write_packets(a, 4097)
    assert len(pkts[1].payload) == 4 and pkts[1].bth.pad_count == 3


@given(st.integers(0, 40000), st.sampled_from([256, 1024, 4096]))
def test_segmentation_property(length, mtu):
    a, _ = _ctxs()
    data = bytes(length)
    cmd = plan_write(a.qpn, 1, data, VADDR, RKEY, mtu)
    pkts = [parse_packet(i) for _, i in tx_build(cmd, a, 10**6, mtu, "10.0.0.1")]
    assert [(len(p.logical_payload), p.bth.pad_count) for p in pkts] == segment_reference(length, mtu)


def test_batches_resume_mid_message():
    a, _ = _ctxs()
    cmd = plan_write(a.qpn, 1, bytes(5 * MTU), VADDR, RKEY, MTU)
    first = tx_build(cmd, a, 2, MTU, "10.0.0.1")
    rest = tx_build(cmd, a, 10, MTU, "10.0.0.1")
    ops = [parse_packet(i).bth.opcode for _, i in first + rest]
    assert ops == [Opcode.RDMA_WRITE_FIRST] + [Opcode.RDMA_WRITE_MIDDLE] * 3 + [Opcode.RDMA_WRITE_LAST]
    assert parse_packet(first[-1][1]).bth.ack_request == 1
    assert cmd.done and cmd.message.last_psn == 1004


def _deliver(b, pkts, region, credits=None):
    credits = credits or CreditPool()
    acts = []
    for p in pkts:
        for act in rx_process(p, b, credits, region, MTU):
            acts.append(act)
            if isinstance(act, Deliver):
                region.write(act.cmd.offset, act.cmd.payload)
    return acts


def test_write_lands_and_is_acked_once_complete():
    a, b = _ctxs()
    region = MemoryRegion(VADDR, 1 << 16, RKEY)
    data, _, pkts = _write_packets(a, 12000, seed=3)
    acts = _deliver(b, pkts, region)
    assert region.read(0, 12000) == data
    acks = [x for x in acts if isinstance(x, SendAck)]
    assert acks[-1] == SendAck(1002, Syndrome.ACK, 1)
    assert b.msn_rx.msn == 1 and b.psn_state.expected_rx_psn == 1003


def test_ack_retires_and_duplicate_ack_is_stale():
    a, _ = _ctxs()
    _write_packets(a, 12000)
    out = on_ack(a, 1002, AethHeader(Syndrome.ACK, 1))
    assert out.retired == 3 and len(out.completed) == 1 and not out.stale
    assert a.psn_state.unacked == 0
    assert on_ack(a, 1002, AethHeader(Syndrome.ACK, 1)).stale


def test_partial_ack_keeps_message_pending():
    a, _ = _ctxs()
    _write_packets(a, 12000)
    out = on_ack(a, 1000, AethHeader(Syndrome.ACK, 0))
    assert out.retired == 1 and out.completed == []
    assert a.psn_state.unacked == 2


def test_nak_sequence_retires_before_and_replays_from_named_psn():
    a, _ = _ctxs()
    _write_packets(a, 5 * MTU)
    out = on_ack(a, 1002, AethHeader(Syndrome.NAK_SEQUENCE, 0))
    assert out.retired == 2 and out.replay_from == 1002
    # the same NAK again does not trigger a second replay
    again = on_ack(a, 1002, AethHeader(Syndrome.NAK_SEQUENCE, 0))
    assert again.stale and again.replay_from is None


def test_gap_produces_one_nak_then_drops():
    a, b = _ctxs()
    region = MemoryRegion(VADDR, 1 << 16, RKEY)
    _, _, pkts = _write_packets(a, 4 * MTU)
    acts = _deliver(b, [pkts[0], pkts[2], pkts[3]], region)
    naks = [x for x in acts if isinstance(x, SendAck) and x.syndrome == Syndrome.NAK_SEQUENCE]
    assert naks == [SendAck(1001, Syndrome.NAK_SEQUENCE, 0)]
    assert Drop(DropReason.OUT_OF_SEQUENCE) in acts
    assert b.psn_state.expected_rx_psn == 1001
    # replay resumes delivery
    _deliver(b, pkts[1:], region)
    assert b.psn_state.expected_rx_psn == 1004 and b.msn_rx.msn == 1


def test_duplicate_write_is_reacked_not_redelivered():
    a, b = _ctxs()
    region = MemoryRegion(VADDR, 1 << 16, RKEY)
    _, _, pkts = _write_packets(a, 100)
    _deliver(b, pkts, region)
    acts = rx_process(pkts[0], b, CreditPool(), region, MTU)
    assert acts == [SendAck(1000, Syndrome.ACK, 1)]
    assert b.msn_rx.msn == 1


def test_no_credit_drops_without_advancing():
    a, b = _ctxs()
    region = MemoryRegion(VADDR, 1 << 16, RKEY)
    _, _, pkts = _write_packets(a, 100)
    pool = CreditPool(1, available=0)
    assert rx_process(pkts[0], b, pool, region, MTU) == [Drop(DropReason.NO_CREDIT)]
    assert b.psn_state.expected_rx_psn == 1000 and pool.exhausted_drops == 1


def test_wrong_rkey_naks_remote_access_and_consumes_psn():
    a, b = _ctxs()
    region = MemoryRegion(VADDR, 1 << 16, RKEY + 1)
    _, _, pkts = _write_packets(a, 3 * MTU)
    acts = _deliver(b, pkts, region)
    assert acts[0] == SendAck(1000, Syndrome.NAK_REMOTE_ACCESS, 0)
    assert not any(isinstance(x, Deliver) for x in acts)
    assert b.psn_state.expected_rx_psn == 1003
    out = on_ack(a, 1000, AethHeader(Syndrome.NAK_REMOTE_ACCESS, 0))
    assert len(out.failed) == 1


def test_out_of_bounds_write_naks():
    a, b = _ctxs()
    region = MemoryRegion(VADDR, 1024, RKEY)
    _, _, pkts = _write_packets(a, 2048)
    assert _deliver(b, pkts, region)[0].syndrome == Syndrome.NAK_REMOTE_ACCESS


def test_read_request_and_response_segments():
    a, b = _ctxs()
    region_b = MemoryRegion(VADDR, 1 << 16, RKEY, bytearray(random.Random(8).randbytes(1 << 16)))
    req = plan_read_request(a.qpn, 5, 12288, VADDR + 256, RKEY, local_offset=0)
    (psn, img), = tx_build(req, a, 1, MTU, "10.0.0.1")
    p = parse_packet(img)
    assert p.bth.opcode == Opcode.RDMA_READ_REQUEST and p.reth.dma_length == 12288 and p.payload == b""
    acts = rx_process(p, b, CreditPool(), region_b, MTU)
    serve = next(x for x in acts if isinstance(x, ServeRead))
    assert serve.plan.segments == 3 and serve.plan.data == region_b.read(256, 12288)
    resp = plan_read_response(b.qpn, serve.plan.data, serve.plan.request_psn, MTU)
    pkts = [parse_packet(i) for _, i in tx_build(resp, b, 10, MTU, "10.0.0.2")]
    assert [q.bth.opcode for q in pkts] == [Opcode.RDMA_READ_RESPONSE_FIRST, Opcode.RDMA_READ_RESPONSE_MIDDLE,
                                             Opcode.RDMA_READ_RESPONSE_LAST]
    assert [q.aeth is not None for q in pkts] == [True, False, True]


def test_small_read_is_single_response_with_aeth():
    a, b = _ctxs()
    region_b = MemoryRegion(VADDR, 4096, RKEY, bytearray(range(256)) * 16)
    req = plan_read_request(a.qpn, 9, 64, VADDR, RKEY, local_offset=128)
    (psn, img), = tx_build(req, a, 1, MTU, "10.0.0.1")
    a.reads.append(ReadTracker(9, 128, 64, psn, 1))
    serve = next(x for x in rx_process(parse_packet(img), b, CreditPool(), region_b, MTU) if isinstance(x, ServeRead))
    (_, rimg), = tx_build(plan_read_response(b.qpn, serve.plan.data, psn, MTU), b, 10, MTU, "10.0.0.2")
    r = parse_packet(rimg)
    assert r.bth.opcode == Opcode.RDMA_READ_RESPONSE_ONLY and r.aeth.syndrome == Syndrome.ACK
    region_a = MemoryRegion(VADDR, 4096, RKEY)
    acts = _deliver(a, [r], region_a)
    assert RetireTo(psn) in acts
    assert region_a.read(128, 64) == bytes(range(64))
    assert not a.reads


def test_ack_packet_becomes_ackin():
    a, b = _ctxs()
    p = parse_packet(build_ack(b, "10.0.0.2", 1000, Syndrome.ACK, 1))
    assert OPCODE_INFO[p.bth.opcode].has_aeth and len(p.payload) == 0
    assert rx_process(p, a, CreditPool()) == [AckIn(1000, AethHeader(Syndrome.ACK, 1))]
