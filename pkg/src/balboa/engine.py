"""The RDMA engine: one network endpoint with its QP table, flow control,
retransmission buffer, services and delivery path.

The engine is event driven.  It reacts to inbound images, timer ticks and
posted work requests, and keeps the link fed through ``_pump``, which picks
the next image in priority order: control packets (ACK/NAK), replays, the
current admitted burst, then a fresh admission through the stream mux.
All state is owned by the reactor thread; the API posts into it.
"""
from __future__ import annotations

import json
import logging
from collections import Counter, deque
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Optional

from .errors import BalboaError, BoundsError, PacketError, QpFailed, UnknownSink
from .flow import CreditPool, FlowStrategy, return_rx_credit, return_tx, try_admit
from .icrc import verify_image
from .netlink.pcap import Sniffer, TapDirection
from .netlink.sim import LinkConfig
from .packet import AETH_LEN, BTH_LEN, IP_LEN, RETH_LEN, UDP_LEN, Syndrome, is_roce_image, pad_for, parse_packet
from .qp import QpConnection, QpContext, QpTable, ReadTracker, psn_add, psn_diff
from .reliability import RetransBuffer, RetransEntry, Source, StreamMux, TransportTimer
from .rx import (
    AckIn, CompletionEvent, Deliver, DeliveryCommand, DeliveryKind, Drop, DropReason, Oper, ReadFailed, RetireTo,
    SendAck, ServeRead, Status, rx_process, segments_for,
)
from .services import default_registry, run_chain
from .services.base import Direction
from .services.delivery import DeliveryStats, MemoryRegion, Route, route_delivery
from .tx import AckOutcome, CommandKind, TxCommand, build_ack, on_ack, plan_read_request, plan_read_response, plan_write, retire, tx_build

log = logging.getLogger(__name__)

ICRC_LEN = 4


@dataclass
class PipelineModel:
    """Virtual per-stage latencies.  Payload streams through each stage in
    64-byte beats, so every stage adds a fixed cost and the datapath adds
    one pass of beats."""

    beat_bytes: int = 64
    beat_ns: float = 5.12  # one 64-byte beat per cycle at 100 Gbit/s
    tx_arbiter_ns: int = 16
    tx_header_ns: int = 24
    tx_icrc_ns: int = 12
    rx_icrc_ns: int = 12
    rx_parse_ns: int = 24
    rx_state_ns: int = 16
    rx_dma_ns: int = 120

    def beats_ns(self, nbytes: int) -> int:
        return int(-(-nbytes // self.beat_bytes) * self.beat_ns)

    def tx_stages(self, nbytes: int) -> dict:
        return {"tx_arbiter": self.tx_arbiter_ns, "tx_headers": self.tx_header_ns,
                "tx_icrc": self.tx_icrc_ns, "tx_stream": self.beats_ns(nbytes)}

    def rx_stages(self, nbytes: int) -> dict:
        return {"rx_icrc": self.rx_icrc_ns, "rx_parse": self.rx_parse_ns, "rx_state": self.rx_state_ns,
                "rx_dma": self.rx_dma_ns, "rx_stream": self.beats_ns(nbytes)}

    def tx_ns(self, nbytes: int) -> int:
        return sum(self.tx_stages(nbytes).values())

    def rx_ns(self, nbytes: int) -> int:
        return sum(self.rx_stages(nbytes).values())


@dataclass
class EngineConfig:
    mtu: int = 4096
    max_outstanding: int = 128
    admission_chunk: int = 32  # packets admitted per arbitration step
    rx_credits: int = 1024
    retrans_capacity: int = 16 * 1024 * 1024
    timeout_ns: int = 50_000_000
    max_retries: int = 7
    tick_ns: int = 1_000_000
    qp_capacity: int = 500
    seed: int = 0
    local_ip: str = "10.0.0.1"
    trace: bool = False  # keep per-packet send/ACK/delivery logs
    pipeline: PipelineModel = field(default_factory=PipelineModel)

    @classmethod
    def from_dict(cls, d: dict) -> "EngineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown engine config keys: {sorted(unknown)}")
        d = dict(d)
        if isinstance(d.get("pipeline"), dict):
            d["pipeline"] = PipelineModel(**d["pipeline"])
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class FileConfig:
    engine: EngineConfig
    link: LinkConfig
    services: list  # chain bound to every QP created by the API
    aes_key: Optional[bytes]


def load_config(path: str) -> FileConfig:
    """Read a JSON config: ``{"engine": {...}, "link": {...},
    "services": [names], "aes_key": "<32 hex digits>"}``."""
    with open(path) as f:
        raw = json.load(f)
    unknown = set(raw) - {"engine", "link", "services", "aes_key"}
    if unknown:
        raise ValueError(f"unknown config sections: {sorted(unknown)}")
    key = raw.get("aes_key")
    return FileConfig(
        engine=EngineConfig.from_dict(raw.get("engine", {})),
        link=LinkConfig(**raw.get("link", {})),
        services=list(raw.get("services", [])),
        aes_key=bytes.fromhex(key) if key else None,
    )


@dataclass
class EngineStats:
    tx_packets: int = 0
    tx_bytes: int = 0
    tx_payload_bytes: int = 0
    retransmitted: int = 0
    acks_sent: int = 0
    naks_sent: int = 0
    rx_packets: int = 0
    stale_acks: int = 0
    service_errors: int = 0
    delivery_errors: int = 0
    callback_errors: int = 0
    retrans_stalls: int = 0
    timeouts: int = 0
    drops: Counter = field(default_factory=Counter)


class CompletionQueue:
    """Per-QP completion events with resettable counters."""

    def __init__(self):
        self.events: list = []
        self.counts: Counter = Counter()
        self.on_malicious: Optional[Callable] = None

    def push(self, ev: CompletionEvent) -> None:
        self.events.append(ev)
        self.counts[ev.oper] += 1

    def count(self, oper: Oper) -> int:
        return self.counts[oper]

    def reset(self, oper: Optional[Oper] = None) -> None:
        if oper is None:
            self.counts.clear()
        else:
            self.counts[oper] = 0


@dataclass
class _RxMessage:
    streams: list = field(default_factory=list)
    delivered: int = 0
    malicious: bool = False
    score: float = 0.0


class DeliveryQueue:
    """Host-facing queue between the RX pipeline and the sink.  Each entry
    holds one receive credit until the sink consumes it."""

    def __init__(self):
        self.pending: deque = deque()
        self.stalled = False
        self.consumed = 0
        self.peak = 0


def chunk_image_bytes(cmd: TxCommand, n: int, mtu: int) -> int:
    """Exact wire size of the next ``n`` packets of ``cmd``."""
    base = IP_LEN + UDP_LEN + BTH_LEN + ICRC_LEN
    if cmd.kind == CommandKind.READ_REQUEST:
        return base + RETH_LEN
    total = 0
    for seg in range(cmd.next_segment, cmd.next_segment + n):
        ln = min(mtu, cmd.length - seg * mtu)
        total += base + ln + pad_for(ln)
        if cmd.kind == CommandKind.WRITE:
            total += RETH_LEN if seg == 0 else 0
        elif cmd.segments == 1 or seg in (0, cmd.segments - 1):
            total += AETH_LEN
    return total


class Engine:
    def __init__(self, config: Optional[EngineConfig] = None, link=None, reactor=None, name: str = "engine"):
        self.cfg = cfg = config or EngineConfig()
        self.name = name
        self.link = link
        self.reactor = reactor
        self.pipeline = cfg.pipeline
        self.qps = QpTable(cfg.qp_capacity, cfg.seed, cfg.max_outstanding)
        self.credits = CreditPool(cfg.rx_credits)
        self.retrans = RetransBuffer(cfg.retrans_capacity)
        self.timer = TransportTimer(cfg.timeout_ns, cfg.max_retries, cfg.tick_ns)
        self.mux = StreamMux()
        self.registry = default_registry()
        self.strategy = FlowStrategy()
        self.regions: dict[int, MemoryRegion] = {}
        self.routes: dict[int, Route] = {}
        self.sinks: dict[str, MemoryRegion] = {}
        self.cqs: dict[int, CompletionQueue] = {}
        self.delivery = DeliveryQueue()
        self.delivery_stats = DeliveryStats()
        self.stats = EngineStats()
        self.sniffer: Optional[Sniffer] = None
        self.completions: list = []
        self.max_inflight: Counter = Counter()
        self.tx_log: list = []  # (t, qpn, psn, retransmission)
        self.ack_log: list = []  # (t, qpn, cumulative acked psn)
        self.delivery_log: list = []  # (qpn, kind, wr_id, msg_offset, length)
        self.completion_hooks: list = []
        self._rx_msgs: dict = {}
        self._high: dict[int, int] = {}
        self._control: deque = deque()
        self._replay: deque = deque()
        self._burst: deque = deque()
        self._pump_ev = None
        self._timer_ev = None
        self._pumping = False
        self._pipe_free = 0
        self._tx_lead = self.pipeline.tx_ns(cfg.mtu + 64)
        self._wr_ids = 0
        if link is not None and hasattr(link, "rx_latency"):
            link.rx_latency = self.pipeline.rx_ns
        if link is not None and hasattr(link, "set_listener"):
            link.set_listener(self._on_wire)
        elif link is not None and hasattr(reactor, "add_reader"):
            reactor.add_reader(link, self._on_wire)

    # ------------------------------------------------------------- setup

    def now(self) -> int:
        return self.reactor.now()

    def create_qp(self, conn: QpConnection, region: MemoryRegion, send_psn: Optional[int] = None,
                  expected_psn: int = 0, services=()) -> QpContext:
        ctx = self.qps.create_qp(conn, send_psn, expected_psn)
        self.regions[conn.local_qpn] = region
        self.cqs[conn.local_qpn] = CompletionQueue()
        if services:
            self.registry.register_service(conn.local_qpn, services)
        return ctx

    def destroy_qp(self, qpn: int) -> None:
        self._fail_qp(self.qps.lookup(qpn), Status.TIMEOUT_EXHAUSTED, report=False)
        self.qps.destroy(qpn)
        self.registry.unregister(qpn)
        self.regions.pop(qpn, None)

    def add_sink(self, name: str, size: int) -> MemoryRegion:
        sink = MemoryRegion(0, size, 0)
        self.sinks[name] = sink
        return sink

    def set_route(self, qpn: int, route: Route) -> None:
        if route.sink is not None and route.sink not in self.sinks:
            raise UnknownSink(f"no sink named {route.sink!r}")
        self.routes[qpn] = route

    def attach_sniffer(self, sniffer: Sniffer) -> None:
        self.sniffer = sniffer

    def stall_sink(self) -> None:
        self.delivery.stalled = True

    def drain_sink(self) -> None:
        self.delivery.stalled = False
        self._drain()

    # ----------------------------------------------------------- posting

    def next_wr_id(self) -> int:
        self._wr_ids += 1
        return self._wr_ids

    def _tx_transform(self, ctx: QpContext, data: bytes) -> bytes:
        bound = self.registry.bound(ctx.qpn)
        if not bound or not bound.tx or not data:
            return data
        streams = [svc.open(ctx, Direction.TX) for svc in bound.tx]
        return run_chain(streams, data, final=True)

    def post_write(self, qpn: int, payload: bytes, remote_vaddr: int, wr_id: Optional[int] = None) -> int:
        ctx = self.qps.lookup(qpn)
        if ctx.failed:
            raise QpFailed(f"QP 0x{qpn:06x} has failed")
        wr_id = self.next_wr_id() if wr_id is None else wr_id
        data = self._tx_transform(ctx, bytes(payload))
        cmd = plan_write(qpn, wr_id, data, remote_vaddr, ctx.connection.remote_rkey, self.cfg.mtu, now=self.now())
        self.mux.push(Source.WRITE, qpn, cmd)
        self._kick()
        return wr_id

    def post_read(self, qpn: int, length: int, remote_vaddr: int, local_offset: int,
                  wr_id: Optional[int] = None) -> int:
        ctx = self.qps.lookup(qpn)
        if ctx.failed:
            raise QpFailed(f"QP 0x{qpn:06x} has failed")
        wr_id = self.next_wr_id() if wr_id is None else wr_id
        cmd = plan_read_request(qpn, wr_id, length, remote_vaddr, ctx.connection.remote_rkey, local_offset,
                                now=self.now())
        self.mux.push(Source.WRITE, qpn, cmd)
        self._kick()
        return wr_id

    # ---------------------------------------------------------- transmit

    def _kick(self) -> None:
        if not self._pumping:
            self._pump()

    def _pump_fire(self) -> None:
        self._pump_ev = None
        self._pump()

    def _pump(self) -> None:
        self._pumping = True
        try:
            while True:
                now = self.now()
                wake = self.link.tx_free_at() - self._tx_lead
                if wake > now:
                    ev = self._pump_ev
                    if ev is None or ev.cancelled or ev.time > wake:
                        if ev is not None:
                            ev.cancel()
                        self._pump_ev = self.reactor.call_at(wake, self._pump_fire)
                    return
                if not self._emit_next(now):
                    return
        finally:
            self._pumping = False

    def _emit_next(self, now: int) -> bool:
        if self._control:
            image, dest = self._control.popleft()
            self._send(image, dest, now)
            return True
        while self._replay:
            qpn, psn, image = self._replay.popleft()
            ctx = self.qps.get(qpn)
            if ctx is None:
                continue
            st = ctx.psn_state
            d = psn_diff(psn, st.last_acked_psn)
            if d == 0 or d > st.unacked:
                continue  # acknowledged while waiting for the link
            # a replay also carries admitted images that never left; those
            # are first transmissions
            high = self._high.get(qpn)
            hd = psn_diff(high, st.last_acked_psn) if high is not None else 0
            retx = high is not None and hd <= st.unacked and d <= hd
            if retx:
                self.stats.retransmitted += 1
            self._send_data(qpn, psn, image, now, retx)
            return True
        if not self._burst and not self._admit():
            return False
        qpn, psn, image = self._burst.popleft()
        self._send_data(qpn, psn, image, now, False)
        return True

    def _chunk(self, cmd: TxCommand) -> int:
        return min(cmd.remaining, self.cfg.admission_chunk, self.cfg.max_outstanding)

    def _eligible(self, qpn: int, cmd: TxCommand) -> bool:
        ctx = self.qps.get(qpn)
        if ctx is None or ctx.failed:
            return False
        n = self._chunk(cmd)
        if ctx.psn_state.outstanding_budget.available < n:
            return False
        if not self.retrans.has_space(chunk_image_bytes(cmd, n, self.cfg.mtu)):
            self.stats.retrans_stalls += 1
            return False
        return True

    def _admit(self) -> bool:
        hit = self.mux.select(self._eligible)
        if hit is None:
            return False
        source, qpn, cmd = hit
        ctx = self.qps.lookup(qpn)
        n = self._chunk(cmd)
        try_admit(ctx.psn_state.outstanding_budget, n)
        pkts = tx_build(cmd, ctx, n, self.cfg.mtu, self.cfg.local_ip)
        if cmd.kind == CommandKind.READ_REQUEST:
            ctx.reads.append(ReadTracker(cmd.wr_id, cmd.local_offset, cmd.length, pkts[0][0],
                                         segments_for(cmd.length, self.cfg.mtu), posted_at=cmd.posted_at))
        if not self.retrans.insert(RetransEntry(qpn, pkts[0][0], [img for _, img in pkts], self.now())):
            raise RuntimeError("retransmission space was checked before admission")
        if cmd.done:
            self.mux.pop(source, qpn)
        for psn, img in pkts:
            self._burst.append((qpn, psn, img))
        return True

    def _dest(self, ctx: QpContext):
        return ctx.connection.remote_ip, ctx.connection.remote_udp_port

    def _send(self, image: bytes, dest, now: int) -> None:
        self.stats.tx_packets += 1
        self.stats.tx_bytes += len(image)
        if self.sniffer is not None:
            self.sniffer.tap(image, TapDirection.TX, now)
        # the TX datapath streams one packet at a time; fixed stage costs overlap
        n = len(image)
        start = max(now, self._pipe_free)
        self._pipe_free = start + self.pipeline.beats_ns(n)
        self.link.send(image, dest, not_before=start + self.pipeline.tx_ns(n))

    def _send_data(self, qpn: int, psn: int, image: bytes, now: int, retx: bool) -> None:
        ctx = self.qps.get(qpn)
        if ctx is None:
            return
        st = ctx.psn_state
        d = psn_diff(psn, st.last_acked_psn)
        high = self._high.get(qpn)
        hd = psn_diff(high, st.last_acked_psn) if high is not None else 0
        if high is None or hd > st.unacked or d > hd:
            self._high[qpn], hd = psn, d
        if hd > self.max_inflight[qpn]:
            self.max_inflight[qpn] = hd
        if self.cfg.trace:
            self.tx_log.append((now, qpn, psn, retx))
        self.timer.arm(qpn, now)
        self._schedule_timer()
        self._send(image, self._dest(ctx), now)

    def _queue_control(self, ctx: QpContext, a: SendAck) -> None:
        img = build_ack(ctx, self.cfg.local_ip, a.psn, a.syndrome, a.msn)
        if a.syndrome == Syndrome.ACK:
            self.stats.acks_sent += 1
        else:
            self.stats.naks_sent += 1
        self._control.append((img, self._dest(ctx)))

    # ----------------------------------------------------------- receive

    def _drop(self, reason: DropReason) -> None:
        self.stats.drops[reason] += 1

    def _on_wire(self) -> None:
        while True:
            image = self.link.recv()
            if image is None:
                break
            self.on_image(image)
        self._kick()

    def on_image(self, image: bytes) -> None:
        self.stats.rx_packets += 1
        if self.sniffer is not None:
            self.sniffer.tap(image, TapDirection.RX, self.now())
        if not is_roce_image(image):
            return self._drop(DropReason.MALFORMED)
        if not verify_image(image):
            return self._drop(DropReason.BAD_ICRC)
        try:
            p = parse_packet(image, self.cfg.mtu)
        except PacketError:
            return self._drop(DropReason.MALFORMED)
        ctx = self.qps.get(p.bth.dest_qpn)
        if ctx is None:
            return self._drop(DropReason.UNKNOWN_QPN)
        if ctx.failed:
            return self._drop(DropReason.QP_FAILED)
        actions = rx_process(p, ctx, self.credits, self.regions.get(ctx.qpn), self.cfg.mtu)
        for a in actions:
            if isinstance(a, Deliver):
                self._deliver(ctx, a.cmd)
            elif isinstance(a, SendAck):
                self._queue_control(ctx, a)
            elif isinstance(a, AckIn):
                self._ack_in(ctx, a)
            elif isinstance(a, RetireTo):
                out = AckOutcome()
                retire(ctx, a.psn, out)
                self._apply_outcome(ctx, out)
            elif isinstance(a, ServeRead):
                self._serve_read(ctx, a)
            elif isinstance(a, ReadFailed):
                self._read_done(ctx, a.tracker, Status.NAK)
            elif isinstance(a, Drop):
                self._drop(a.reason)
            if ctx.failed:
                break

    def _serve_read(self, ctx: QpContext, a: ServeRead) -> None:
        data = a.plan.data
        try:
            data = self._tx_transform(ctx, data)
        except BalboaError as exc:
            self.stats.service_errors += 1
            log.warning("TX service failed on READ response: %s", exc)
        cmd = plan_read_response(ctx.qpn, data, a.plan.request_psn, self.cfg.mtu, now=self.now())
        self.mux.push(Source.READ_RESPONSE, ctx.qpn, cmd)

    def _ack_in(self, ctx: QpContext, a: AckIn) -> None:
        out = on_ack(ctx, a.psn, a.aeth)
        if out.stale:
            self.stats.stale_acks += 1
        self._apply_outcome(ctx, out)
        if out.replay_from is not None:
            self.strategy.on_nak(ctx.psn_state.outstanding_budget, self.now())
            self._go_back(ctx, out.replay_from, retry=False)

    def _apply_outcome(self, ctx: QpContext, out: AckOutcome) -> None:
        now = self.now()
        qpn = ctx.qpn
        st = ctx.psn_state
        if out.retired:
            self.retrans.release(qpn, st.last_acked_psn)
            return_tx(st.outstanding_budget, out.retired)
            self.strategy.on_ack(st.outstanding_budget, out.retired, now)
            self.timer.progress(qpn, now, st.unacked > 0)
            self._schedule_timer()
            if self.cfg.trace:
                self.ack_log.append((now, qpn, st.last_acked_psn))
        for m in out.failed:
            self._report_msg(ctx, m, Status.NAK)
        for m in out.completed:
            if not m.reported and m.kind != CommandKind.READ_REQUEST:
                self._report_msg(ctx, m, Status.OK)

    def _report_msg(self, ctx: QpContext, m, status: Status) -> None:
        if m.reported:
            return
        m.reported = True
        if m.kind == CommandKind.READ_REQUEST:
            for t in list(ctx.reads):
                if t.request_psn == m.first_psn:
                    ctx.reads.remove(t)
                    self._read_done(ctx, t, status)
            return
        oper = Oper.REMOTE_RDMA_WRITE if m.kind == CommandKind.WRITE else Oper.LOCAL_READ
        self._complete(CompletionEvent(ctx.qpn, oper, m.wr_id, m.length, status, posted_at=m.posted_at))

    def _read_done(self, ctx: QpContext, t: ReadTracker, status: Status,
                   malicious: bool = False, score: float = 0.0) -> None:
        if t.reported:
            return
        t.reported = True
        self._complete(CompletionEvent(ctx.qpn, Oper.REMOTE_RDMA_READ, t.wr_id, t.length, status, malicious,
                                       score, t.local_offset, posted_at=t.posted_at))

    def _complete(self, ev: CompletionEvent) -> None:
        ev.timestamp = self.now()
        self.completions.append(ev)
        cq = self.cqs.get(ev.qpn)
        if cq is not None:
            cq.push(ev)
            if ev.malicious and cq.on_malicious is not None:
                try:
                    cq.on_malicious(ev.qpn, ev.offset, ev.length, ev.score)
                except Exception as exc:  # user callbacks must not break the engine
                    self.stats.callback_errors += 1
                    log.warning("malicious-flag callback raised: %s", exc)
        for hook in self.completion_hooks:
            hook(ev)

    def _go_back(self, ctx: QpContext, from_psn: int, retry: bool) -> None:
        qpn = ctx.qpn
        now = self.now()
        items = self.retrans.replay(qpn, from_psn, now, retry=retry)
        if not items:
            return
        self._burst = deque(i for i in self._burst if i[0] != qpn)
        self._replay = deque(i for i in self._replay if i[0] != qpn)
        self._replay.extend((qpn, psn, img) for psn, img in items)
        self.timer.restart(qpn, now)
        self._schedule_timer()

    # ----------------------------------------------------------- delivery

    def _deliver(self, ctx: QpContext, cmd: DeliveryCommand) -> None:
        key = (ctx.qpn, cmd.kind)
        bound = self.registry.bound(ctx.qpn)
        msg = self._rx_msgs.get(key)
        if cmd.msg_offset == 0 or msg is None:
            msg = self._rx_msgs[key] = _RxMessage()
            if bound and bound.rx:
                try:
                    msg.streams = [svc.open(ctx, Direction.RX) for svc in bound.rx]
                except BalboaError as exc:
                    self.stats.service_errors += 1
                    log.warning("RX service open failed: %s", exc)
        if bound:
            for insp in bound.inspectors:
                v = insp.inspect(cmd.payload)
                msg.malicious |= v.malicious
                msg.score = max(msg.score, v.score)
        data = cmd.payload
        if msg.streams:
            try:
                data = run_chain(msg.streams, data, cmd.last)
            except BalboaError as exc:
                self.stats.service_errors += 1
                log.warning("RX service failed: %s", exc)
        cmd.offset = cmd.msg_base + msg.delivered
        cmd.payload = data
        msg.delivered += len(data)
        cmd.malicious_flag = msg.malicious
        cmd.score = msg.score
        if cmd.last:
            del self._rx_msgs[key]
        self.delivery.pending.append(cmd)
        self.delivery.peak = max(self.delivery.peak, len(self.delivery.pending))
        self._drain()

    def _drain(self) -> None:
        q = self.delivery
        while q.pending and not q.stalled:
            cmd = q.pending.popleft()
            ctx = self.qps.get(cmd.qpn)
            region = self.regions.get(cmd.qpn)
            try:
                route_delivery(cmd, self.routes.get(cmd.qpn, Route()), region, self.sinks, self.delivery_stats)
            except (BoundsError, UnknownSink) as exc:
                self.stats.delivery_errors += 1
                log.warning("delivery failed: %s", exc)
            return_rx_credit(self.credits)
            q.consumed += 1
            if self.cfg.trace:
                self.delivery_log.append((cmd.qpn, cmd.kind, cmd.wr_id, cmd.msg_offset, len(cmd.payload)))
            if not cmd.last or ctx is None:
                continue
            if cmd.kind == DeliveryKind.WRITE:
                self._complete(CompletionEvent(cmd.qpn, Oper.LOCAL_WRITE, cmd.wr_id, cmd.msg_length, Status.OK,
                                               cmd.malicious_flag, cmd.score, cmd.msg_base))
            elif cmd.tracker is not None:
                self._read_done(ctx, cmd.tracker, Status.OK, cmd.malicious_flag, cmd.score)

    # -------------------------------------------------------------- timer

    def _schedule_timer(self) -> None:
        nd = self.timer.next_deadline()
        if nd is None:
            return
        tick = self.timer.tick_ns
        target = -(-nd // tick) * tick
        ev = self._timer_ev
        if ev is not None and not ev.cancelled and ev.time <= target:
            return
        if ev is not None:
            ev.cancel()
        self._timer_ev = self.reactor.call_at(target, self._on_tick)

    def _on_tick(self) -> None:
        self._timer_ev = None
        now = self.now()
        for exp in self.timer.poll(now):
            ctx = self.qps.get(exp.qpn)
            if ctx is None or ctx.failed:
                continue
            self.stats.timeouts += 1
            self.strategy.on_timeout(ctx.psn_state.outstanding_budget, now)
            if exp.exhausted:
                self._fail_qp(ctx, Status.TIMEOUT_EXHAUSTED)
            else:
                self._go_back(ctx, psn_add(ctx.psn_state.last_acked_psn, 1), retry=True)
        self._schedule_timer()
        self._kick()

    def _fail_qp(self, ctx: QpContext, status: Status, report: bool = True) -> None:
        """Mark a QP failed and complete everything it still owes."""
        qpn = ctx.qpn
        ctx.failed = True
        self.timer.disarm(qpn)
        self.retrans.drop_qp(qpn)
        self._burst = deque(i for i in self._burst if i[0] != qpn)
        self._replay = deque(i for i in self._replay if i[0] != qpn)
        queued = self.mux.drop_qp(qpn)
        b = ctx.psn_state.outstanding_budget
        b.in_flight = 0
        b.waiting.clear()
        if not report:
            return
        for m in list(ctx.pending):
            self._report_msg(ctx, m, status)
        ctx.pending.clear()
        for t in list(ctx.reads):
            self._read_done(ctx, t, status)
        ctx.reads.clear()
        for cmd in queued:
            if cmd.message is not None and cmd.message.reported:
                continue
            if cmd.kind == CommandKind.WRITE:
                self._complete(CompletionEvent(qpn, Oper.REMOTE_RDMA_WRITE, cmd.wr_id, cmd.length, status,
                                               posted_at=cmd.posted_at))
            elif cmd.kind == CommandKind.READ_REQUEST:
                self._complete(CompletionEvent(qpn, Oper.REMOTE_RDMA_READ, cmd.wr_id, cmd.length, status,
                                               offset=cmd.local_offset, posted_at=cmd.posted_at))

    # ------------------------------------------------------------ status

    def idle(self) -> bool:
        """No queued, in-flight or unacknowledged work."""
        if self._control or self._replay or self._burst or self.mux.pending():
            return False
        return all(ctx.failed or (ctx.psn_state.unacked == 0 and not ctx.reads) for ctx in self.qps)

    def close(self) -> None:
        if self._pump_ev is not None:
            self._pump_ev.cancel()
        if self._timer_ev is not None:
            self._timer_ev.cancel()
        if self.sniffer is not None:
            self.sniffer.close()
