from __future__ import annotations

import io
import time

import pytest

from balboa.errors import EndpointClosed, Oversized
from balboa.netlink import LinkConfig, SimLink, Simulation, UdpLink
from balboa.netlink.pcap import PcapReader, PcapWriter, ProtocolFilter, Sniffer, SnifferConfig, TapDirection, read_pcap
from balboa.netlink.sim import PROFILES, link_profile
from balboa.packet import AethHeader, Opcode, RethHeader, Syndrome, make_packet, serialize_packet


def _pump(link_cfg, n=1000, size=100, seed=0):
    sim = Simulation()
    link = SimLink(sim, link_cfg.with_(seed=seed), trace=True)
    got = []
    link.b.set_listener(lambda: got.append(link.b.recv()))
    for i in range(n):
        link.a.send(i.to_bytes(4, "big") + bytes(size - 4))
    sim.run()
    return link, got


def test_lossless_delivers_everything_in_order():
    link, got = _pump(LinkConfig())
    assert [int.from_bytes(g[:4], "big") for g in got] == list(range(1000))


def test_blackhole_delivers_nothing():
    link, got = _pump(PROFILES["blackhole"])
    assert got == [] and link.a.stats.lost == 1000


def test_loss_rate_roughly_matches():
    link, got = _pump(LinkConfig(loss_prob=0.1), n=5000)
    assert 400 < 5000 - len(got) < 600


def test_duplicates_and_reordering_counted():
    link, got = _pump(LinkConfig(duplicate_prob=0.05, reorder_prob=0.05), n=2000)
    st = link.a.stats
    assert st.duplicated > 0 and st.reordered > 0
    assert len(got) == 2000 + st.duplicated
    ids = [int.from_bytes(g[:4], "big") for g in got]
    assert ids != sorted(ids) and set(ids) == set(range(2000))


def test_seeded_runs_are_identical():
    cfg = PROFILES["lossy"]
    l1, g1 = _pump(cfg, seed=3)
    l2, g2 = _pump(cfg, seed=3)
    l3, _ = _pump(cfg, seed=4)
    assert l1.trace_digest() == l2.trace_digest() and g1 == g2
    assert l1.trace_digest() != l3.trace_digest()


def test_bandwidth_cap_within_two_percent():
    sim = Simulation()
    link = SimLink(sim, LinkConfig(bandwidth_cap=1e9, delay_min_us=0, delay_max_us=0))
    for _ in range(2000):
        link.a.send(bytes(4096))
    sim.run()
    st = link.a.stats
    rate = st.bytes_sent / ((st.last_departure - st.first_send) / 1e9)
    assert abs(rate - 1e9) / 1e9 < 0.02


def test_oversized_and_closed():
    sim = Simulation()
    link = SimLink(sim, LinkConfig(mtu=1024))
    with pytest.raises(Oversized):
        link.a.send(bytes(1024 + 61))
    link.a.send(bytes(1024 + 60))
    link.a.close()
    with pytest.raises(EndpointClosed):
        link.a.send(b"x")
    with pytest.raises(EndpointClosed):
        link.a.recv()


def test_profiles_and_validation():
    assert link_profile("lossy").loss_prob == 0.05
    with pytest.raises(ValueError):
        link_profile("nope")
    with pytest.raises(ValueError):
        LinkConfig(loss_prob=1.5)
    with pytest.raises(ValueError):
        LinkConfig(delay_min_us=5, delay_max_us=1)


def test_simulation_ordering():
    sim = Simulation()
    log = []
    sim.call_at(20, log.append, "b")
    sim.call_at(10, log.append, "a")
    ev = sim.call_at(15, log.append, "x")
    ev.cancel()
    sim.call_at(20, log.append, "c")
    sim.run()
    assert log == ["a", "b", "c"] and sim.now() == 20


def test_udp_loopback():
    a = UdpLink(("127.0.0.1", 0))
    b = UdpLink(("127.0.0.1", 0), peer=a.address)
    a.peer = b.address
    try:
        b.send(b"hello")
        a.send(bytes(4096 + 60))
        deadline = time.time() + 2
        got_a = got_b = None
        while time.time() < deadline and (got_a is None or got_b is None):
            got_a = got_a or a.recv()
            got_b = got_b or b.recv()
        assert got_a == b"hello" and len(got_b) == 4156
        with pytest.raises(Oversized):
            a.send(bytes(5000))
    finally:
        a.close()
        b.close()
    with pytest.raises(EndpointClosed):
        a.send(b"x")


# capture

def _ack():
    return serialize_packet(make_packet(Opcode.ACKNOWLEDGE, 0x11, 7, aeth=AethHeader(Syndrome.ACK, 1)))


def test_pcap_layout_for_one_ack():
    buf = io.BytesIO()
    with PcapWriter(buf) as w:
        w.write(1_500_000_000, _ack())
    raw = buf.getvalue()
    assert len(raw) == 24 + 16 + 48
    assert raw[:4] == bytes.fromhex("d4c3b2a1")
    assert int.from_bytes(raw[20:24], "little") == 101
    link, snap, recs = read_pcap(raw)
    assert (recs[0].ts_sec, recs[0].ts_usec, recs[0].data) == (1, 500_000, _ack())


def test_pcap_readable_by_scapy(tmp_path):
    from scapy.contrib.roce import BTH
    from scapy.utils import rdpcap
    path = str(tmp_path / "x.pcap")
    img = serialize_packet(make_packet(Opcode.RDMA_WRITE_ONLY, 0x11, 3, b"abcd" * 16, reth=RethHeader(0, 1, 64)))
    with PcapWriter(path) as w:
        w.write(1000, img)
        w.write(2000, _ack())
    pkts = rdpcap(path)
    assert len(pkts) == 2 and pkts[0][BTH].opcode == 0x0A and pkts[1][BTH].opcode == 0x11


def test_sniffer_omit_payload_and_filter():
    data = serialize_packet(make_packet(Opcode.RDMA_WRITE_ONLY, 0x11, 3, bytes(1000), reth=RethHeader(0, 1, 1000)))
    other = bytearray(data)
    other[22:24] = (53).to_bytes(2, "big")
    buf = io.BytesIO()
    s = Sniffer(SnifferConfig(protocol_filter=ProtocolFilter.ROCE_ONLY, omit_payload=True), buf)
    s.tap(data, TapDirection.TX, 0)
    s.tap(bytes(other), TapDirection.TX, 0)
    s.close()
    _, _, recs = read_pcap(buf.getvalue())
    assert len(recs) == 1 and s.filtered == 1
    assert recs[0].incl_len == 20 + 8 + 12 + 16 and recs[0].orig_len == len(data)


def test_sniffer_direction_filter():
    buf = io.BytesIO()
    s = Sniffer(SnifferConfig(direction=TapDirection.RX), buf)
    s.tap(_ack(), TapDirection.TX, 0)
    s.tap(_ack(), TapDirection.RX, 0)
    assert s.captured == 1


class _Broken(io.BytesIO):
    def __init__(self):
        super().__init__()
        self.fail = False

    def write(self, b):
        if self.fail:
            raise OSError("disk full")
        return super().write(b)


def test_sniffer_io_error_disables_capture():
    f = _Broken()
    s = Sniffer(SnifferConfig(), f)
    img = _ack()
    s.tap(img, TapDirection.RX, 0)
    f.fail = True
    s.tap(img, TapDirection.RX, 0)
    assert not s.enabled and "disk full" in s.error
    s.tap(img, TapDirection.RX, 0)  # no exception once disabled
    assert s.captured == 1
    bad = Sniffer(SnifferConfig(output_path="/nonexistent/dir/x.pcap"))
    assert not bad.enabled


def test_reader_round_trip_and_errors():
    buf = io.BytesIO()
    w = PcapWriter(buf)
    images = [bytes([i]) * (40 + i) for i in range(10)]
    for i, img in enumerate(images):
        w.write(i * 1000, img)
    raw = buf.getvalue()
    r = PcapReader(raw)
    assert len(r) == 10 and [x.data for x in r] == images
    with pytest.raises(ValueError):
        read_pcap(raw[:-3])
    with pytest.raises(ValueError):
        read_pcap(b"\x00" * 24)
