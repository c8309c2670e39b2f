from __future__ import annotations

import random
import socket
import threading

import pytest
from hypothesis import given
from hypothesis import strategies as st

from balboa.api import OobQpDescriptor, SgEntry, init_rdma
from balboa.engine import Engine, EngineConfig
from balboa.errors import BoundsError, DescriptorMismatch, HandleClosed, OobTimeout, QpFailed
from balboa.netlink import UdpLink
from balboa.rx import Oper, Status
from balboa.runtime import ThreadedReactor

MiB = 1 << 20


def test_descriptor_line_format():
    d = OobQpDescriptor(0x11, 0xABCDEF, 0xDEADBEEF, 0x7F0000110000_0000 & (2**64 - 1), 4096, "10.0.0.1", 4791)
    line = d.to_line()
    assert line.startswith("BALBOA1 qpn=000011 psn=abcdef rkey=deadbeef vaddr=")
    assert line.endswith(" size=4096 ip=10.0.0.1 port=4791 aes=-\n")
    assert OobQpDescriptor.from_line(line) == d


@given(st.integers(0, 2**24 - 1), st.integers(0, 2**24 - 1), st.integers(0, 2**32 - 1), st.integers(0, 2**64 - 1),
       st.integers(1, 2**40), st.integers(0, 65535), st.one_of(st.none(), st.binary(min_size=16, max_size=16)))
def test_descriptor_round_trip(qpn, psn, rkey, vaddr, size, port, key):
    d = OobQpDescriptor(qpn, psn, rkey, vaddr, size, "192.168.1.20", port, key)
    assert OobQpDescriptor.from_line(d.to_line()) == d


@pytest.mark.parametrize("line", [
    "", "BALBOA1 qpn=11\n", "BALBOA2 qpn=000011 psn=000000 rkey=00000000 vaddr=0000000000000000 size=1 "
    "ip=1.2.3.4 port=1 aes=-\n", "BALBOA1 qpn=000011 psn=000000 rkey=00000000 vaddr=0000000000000000 size=1 "
    "ip=1.2.3.999 port=1 aes=-\n",
])
def test_descriptor_rejects_malformed(line):
    with pytest.raises(DescriptorMismatch):
        OobQpDescriptor.from_line(line)


def test_vaddr_symmetry(pair):
    assert pair.ha.remote_vaddr == pair.hb.local_vaddr
    assert pair.hb.remote_vaddr == pair.ha.local_vaddr
    assert pair.ha.remote.rkey == pair.hb.local.rkey


def test_bounds_checks(pair_factory):
    p = pair_factory(size=MiB)
    with pytest.raises(BoundsError):
        p.ha.invoke(Oper.REMOTE_RDMA_WRITE, SgEntry(0))
    with pytest.raises(BoundsError):
        p.ha.invoke(Oper.REMOTE_RDMA_WRITE, SgEntry(MiB + 1))
    with pytest.raises(BoundsError):
        p.ha.invoke(Oper.REMOTE_RDMA_READ, SgEntry(16, 0, MiB - 8))
    with pytest.raises(BoundsError):
        p.ha.invoke(Oper.REMOTE_RDMA_WRITE, SgEntry(16, -1, 0))
    p.ha.invoke(Oper.REMOTE_RDMA_WRITE, SgEntry(MiB))
    assert p.ha.wait_completed(Oper.REMOTE_RDMA_WRITE, 1, 10**11)


def test_closed_handle(pair):
    pair.ha.close()
    with pytest.raises(HandleClosed):
        pair.ha.invoke(Oper.REMOTE_RDMA_WRITE, SgEntry(8))
    with pytest.raises(HandleClosed):
        pair.ha.check_completed(Oper.REMOTE_RDMA_WRITE)
    pair.ha.close()  # idempotent


def test_three_writes_land_and_complete_on_both_sides(pair):
    pair.ha.buffer[:] = random.Random(1).randbytes(len(pair.ha.buffer))
    for i in range(3):
        pair.ha.invoke(Oper.REMOTE_RDMA_WRITE, SgEntry(1000, i * 1000, 5000 + i * 1000))
    pair.run()
    assert pair.ha.check_completed(Oper.REMOTE_RDMA_WRITE) == 3
    assert pair.hb.check_completed(Oper.LOCAL_WRITE) == 3
    assert pair.hb.buffer[5000:8000] == pair.ha.buffer[0:3000]
    ev = pair.ha.completions(Oper.REMOTE_RDMA_WRITE)
    assert [e.status for e in ev] == [Status.OK] * 3 and [e.length for e in ev] == [1000] * 3
    pair.ha.reset_completed(Oper.REMOTE_RDMA_WRITE)
    assert pair.ha.check_completed(Oper.REMOTE_RDMA_WRITE) == 0


def test_batch_of_64_writes(pair_factory):
    p = pair_factory(size=64 * 4096)
    p.ha.buffer[:] = random.Random(2).randbytes(len(p.ha.buffer))
    ids = [p.ha.invoke(Oper.REMOTE_RDMA_WRITE, SgEntry(4096, i * 4096, i * 4096)) for i in range(64)]
    assert len(set(ids)) == 64
    p.ha.wait_completed(Oper.REMOTE_RDMA_WRITE, 64)
    assert p.hb.buffer == p.ha.buffer
    assert p.a.max_inflight and max(p.a.max_inflight.values()) <= 128


def test_32k_read(pair):
    pair.hb.buffer[:] = random.Random(3).randbytes(len(pair.hb.buffer))
    pair.ha.invoke(Oper.REMOTE_RDMA_READ, SgEntry(32768, 100, 999))
    pair.ha.wait_completed(Oper.REMOTE_RDMA_READ, 1)
    assert pair.ha.buffer[100:100 + 32768] == pair.hb.buffer[999:999 + 32768]
    ev = pair.ha.completions(Oper.REMOTE_RDMA_READ)[0]
    assert ev.status == Status.OK and ev.length == 32768 and ev.offset == 100
    pair.run()
    assert pair.hb.check_completed(Oper.LOCAL_READ) == 1


def test_malicious_callback_fires_once_and_is_isolated(pair_factory):
    p = pair_factory(services=("dpi",))
    calls = []

    def cb(qpn, offset, length, score):
        calls.append((qpn, offset, length, score))
        raise RuntimeError("user bug")

    p.hb.on_malicious(cb)
    p.ha.buffer[:16] = b"\x7fELF" + bytes(12)
    p.ha.buffer[16:16 + 9000] = b"\x7fELF" * 2250
    p.ha.invoke(Oper.REMOTE_RDMA_WRITE, SgEntry(9000, 16, 64))
    p.ha.invoke(Oper.REMOTE_RDMA_WRITE, SgEntry(100, 20000, 20000))  # clean
    p.run()
    assert len(calls) == 1 and calls[0][1:3] == (64, 9000) and calls[0][3] > 0.9
    assert p.b.stats.callback_errors == 1
    ev = p.hb.completions(Oper.LOCAL_WRITE)
    assert [e.malicious for e in ev] == [True, False]
    assert p.hb.buffer[64:64 + 9000] == p.ha.buffer[16:16 + 9000]  # never altered


def test_aes_qp_encrypts_on_the_wire(pair_factory):
    key = bytes(range(16))
    p = pair_factory(services=("aes",), aes_key=key)
    seen = []
    orig = p.b.on_image
    p.b.on_image = lambda img: (seen.append(img), orig(img))[1]
    p.ha.buffer[:4096] = b"secret!!" * 512
    p.ha.invoke(Oper.REMOTE_RDMA_WRITE, SgEntry(4096))
    p.run()
    assert p.hb.buffer[:4096] == b"secret!!" * 512
    assert seen and not any(b"secret!!" in s for s in seen)
    with pytest.raises(BoundsError):
        p.ha.invoke(Oper.REMOTE_RDMA_WRITE, SgEntry(10))


def test_aes_key_mismatch_rejected():
    from balboa.api import establish, reserve
    from balboa.netlink import SimLink, Simulation
    sim = Simulation()
    link = SimLink(sim)
    a, b = Engine(EngineConfig(), link.a, sim), Engine(EngineConfig(), link.b, sim)
    la, lb = reserve(a, 64, bytes(16)), reserve(b, 64, None)
    with pytest.raises(DescriptorMismatch):
        establish(a, la, lb.descriptor)


def test_failed_qp_rejects_posts(pair_factory):
    from balboa.netlink.sim import PROFILES
    p = pair_factory(link=PROFILES["blackhole"], cfg=EngineConfig(timeout_ns=1_000_000, max_retries=1))
    p.ha.invoke(Oper.REMOTE_RDMA_WRITE, SgEntry(64))
    p.run()
    assert p.ha.completions()[0].status == Status.TIMEOUT_EXHAUSTED
    with pytest.raises(QpFailed):
        p.ha.invoke(Oper.REMOTE_RDMA_WRITE, SgEntry(64))


def _free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def _udp_engine(name, seed):
    r = ThreadedReactor(name).start()
    cfg = EngineConfig(local_ip="127.0.0.1", seed=seed, timeout_ns=200_000_000)
    return r, Engine(cfg, UdpLink(("127.0.0.1", 0)), r, name)


def test_init_rdma_over_tcp_and_udp():
    port = _free_port()
    ra, ea = _udp_engine("srv", 1)
    rb, eb = _udp_engine("cli", 2)
    out = {}
    t = threading.Thread(target=lambda: out.setdefault("srv", init_rdma(ea, 65536, port, timeout=5)))
    t.start()
    try:
        for _ in range(50):
            try:
                hc = init_rdma(eb, 65536, port, peer="127.0.0.1", timeout=5)
                break
            except OobTimeout:
                threading.Event().wait(0.05)
        t.join(5)
        hs = out["srv"]
        hs.buffer[:] = random.Random(5).randbytes(65536)
        hc.buffer[:] = random.Random(6).randbytes(65536)
        hc.invoke(Oper.REMOTE_RDMA_READ, SgEntry(20000, 0, 100))
        hc.invoke(Oper.REMOTE_RDMA_WRITE, SgEntry(30000, 30000, 30000))
        hc.wait_completed(Oper.REMOTE_RDMA_READ, 1, 10 * 10**9)
        hc.wait_completed(Oper.REMOTE_RDMA_WRITE, 1, 10 * 10**9)
        assert hc.buffer[:20000] == hs.buffer[100:20100]
        assert hs.buffer[30000:60000] == hc.buffer[30000:60000]
    finally:
        ra.stop()
        rb.stop()
        ea.link.close()
        eb.link.close()


def test_oob_timeout():
    r, e = _udp_engine("lonely", 3)
    try:
        with pytest.raises(OobTimeout):
            init_rdma(e, 64, _free_port(), timeout=0.2)
        with pytest.raises(OobTimeout):
            init_rdma(e, 64, _free_port(), peer="127.0.0.1", timeout=0.2)
    finally:
        r.stop()
        e.link.close()
