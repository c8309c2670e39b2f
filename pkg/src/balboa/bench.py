"""Benchmarks over two in-process engines.

Simulator-backed runs measure virtual time, so results are a function of
the link model, the pipeline latency model and the seed.  Each mode checks
its own shape assertions; a result passes when all of them hold.
"""
from __future__ import annotations

import csv
import hashlib
import io
import random
import re
import time
from dataclasses import dataclass, field, replace as dc_replace
from typing import Callable, Optional

import numpy as np

from .api import RdmaHandle, SgEntry, connect_local, init_rdma
from .engine import Engine, EngineConfig
from .errors import BenchTimeout, OobTimeout
from .netlink.sim import LinkConfig, SimLink, Simulation, link_profile
from .netlink.udp import UdpLink
from .reliability import UDP_TIMEOUT_NS
from .runtime import ThreadedReactor
from .rx import Oper
from .services import Route, RouteMode, aes_decrypt, aes_encrypt
from .services.dlrm import RECORD_WIDTH, preprocess_records

MODES = ("latency", "throughput", "multiqp", "aes_compare", "dpi_overhead", "preproc_paths")
DEFAULT_SIZES = [1 << k for k in range(6, 21)]  # 64 B .. 1 MiB
CSV_HEADER = ["mode", "op", "size", "qp", "metric", "unit", "mean", "p5", "p95", "samples", "bytes"]
SATURATION_SIZE = 32 * 1024
DEFAULT_LINK = {
    "latency": "lossless", "throughput": "capped", "multiqp": "capped",
    "aes_compare": "capped", "dpi_overhead": "capped", "preproc_paths": "capped",
}
AES_KEY = bytes(range(16))
VIRTUAL_LIMIT_NS = 600 * 10**9
MAX_REGION = 1 << 28


@dataclass
class BenchSpec:
    mode: str
    sizes: list = field(default_factory=lambda: list(DEFAULT_SIZES))
    batch: int = 64
    reps: int = 100
    qps: int = 1
    link: Optional[str] = None
    seed: int = 0
    op: Optional[str] = None  # write, or read; multiqp defaults to read
    breakdown: bool = False
    engine: EngineConfig = field(default_factory=EngineConfig)
    link_config: Optional[LinkConfig] = None
    host_ns_per_byte: float = 1.4  # host-thread preprocessing cost, preproc_paths route 1
    copy_ns_per_byte: float = 0.1  # host staging copy cost, routes 1 and 2
    peer: Optional[str] = None  # client role: host:oob_port of a serving peer

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; choose from {', '.join(MODES)}")
        if self.reps < 1 or self.batch < 1 or self.qps < 1:
            raise ValueError("reps, batch and qps must be at least 1")
        if not self.sizes or min(self.sizes) < 1:
            raise ValueError("sizes must be positive")
        if max(self.sizes) > MAX_REGION:
            raise ValueError(f"sizes must not exceed the {MAX_REGION}-byte region limit")
        if self.op is None:
            self.op = "read" if self.mode == "multiqp" else "write"

    @property
    def udp(self) -> bool:
        return bool(self.link and self.link.startswith("udp:"))

    @property
    def udp_host(self) -> str:
        return self.link.split(":", 1)[1] or "127.0.0.1"

    def link_cfg(self) -> LinkConfig:
        if self.link_config is not None:
            return self.link_config
        if self.udp:
            return LinkConfig(mtu=self.engine.mtu)
        name = self.link or DEFAULT_LINK[self.mode]
        return link_profile(name).with_(seed=self.seed)


@dataclass
class BenchRow:
    mode: str
    op: str
    size: int
    qp: int
    metric: str
    unit: str
    mean: float
    p5: float
    p95: float
    samples: int
    bytes: int = 0

    def values(self) -> list:
        return [self.mode, self.op, self.size, self.qp, self.metric, self.unit,
                f"{self.mean:.6g}", f"{self.p5:.6g}", f"{self.p95:.6g}", self.samples, self.bytes]


@dataclass
class BenchResult:
    spec: BenchSpec
    rows: list = field(default_factory=list)
    checks: list = field(default_factory=list)  # (name, ok, detail)

    @property
    def passed(self) -> bool:
        return all(ok for _, ok, _ in self.checks)

    def check(self, name: str, ok: bool, detail: str = "") -> bool:
        self.checks.append((name, bool(ok), detail))
        return ok

    def row(self, *args, **kw) -> BenchRow:
        r = BenchRow(self.spec.mode, *args, **kw)
        self.rows.append(r)
        return r

    def find(self, metric: str, size: Optional[int] = None, qp: Optional[int] = None) -> list:
        return [r for r in self.rows if r.metric == metric and (size is None or r.size == size)
                and (qp is None or r.qp == qp)]


def stats_row(res: BenchResult, op: str, size: int, qp: int, metric: str, unit: str, samples,
              nbytes: int = 0) -> BenchRow:
    a = np.asarray(samples, dtype=np.float64)
    return res.row(op, size, qp, metric, unit, float(a.mean()), float(np.percentile(a, 5)),
                   float(np.percentile(a, 95)), len(a), nbytes)


def write_csv(result: BenchResult, target) -> None:
    own = isinstance(target, str)
    f = open(target, "w", newline="") if own else target
    try:
        w = csv.writer(f)
        w.writerow(CSV_HEADER)
        for r in result.rows:
            w.writerow(r.values())
    finally:
        if own:
            f.close()


def csv_text(result: BenchResult) -> str:
    buf = io.StringIO()
    write_csv(result, buf)
    return buf.getvalue()


_SIZE = re.compile(r"(\d+)([KkMmGg]?)i?[Bb]?$")


def parse_size(text: str) -> int:
    m = _SIZE.match(text.strip())
    if m is None:
        raise ValueError(f"bad size {text!r}")
    mult = {"": 1, "k": 1 << 10, "m": 1 << 20, "g": 1 << 30}[m.group(2).lower()]
    return int(m.group(1)) * mult


def parse_sizes(text: str) -> list:
    """``64,4K,1M`` lists sizes; ``64-1M`` expands to powers of two."""
    out = []
    for part in text.split(","):
        if "-" in part:
            lo, hi = (parse_size(x) for x in part.split("-", 1))
            s = lo
            while s <= hi:
                out.append(s)
                s *= 2
        elif part.strip():
            out.append(parse_size(part))
    return out


class SimPair:
    """Two engines on one simulated link with ``qps`` connected handles."""

    def __init__(self, link_cfg: LinkConfig, engine_cfg: EngineConfig, size: int, qps: int = 1,
                 services=(), services_b=None, aes_key: Optional[bytes] = None, seed: int = 0,
                 reverse: Optional[LinkConfig] = None):
        self.sim = Simulation()
        self.link = SimLink(self.sim, link_cfg, reverse)
        self.a = Engine(dc_replace(engine_cfg, local_ip="10.0.0.1", seed=seed), self.link.a, self.sim, "a")
        self.b = Engine(dc_replace(engine_cfg, local_ip="10.0.0.2", seed=seed + 1), self.link.b, self.sim, "b")
        self.handles = [connect_local(self.a, self.b, size, services, aes_key, services_b) for _ in range(qps)]

    @property
    def ha(self) -> RdmaHandle:
        return self.handles[0][0]

    @property
    def hb(self) -> RdmaHandle:
        return self.handles[0][1]

    def now(self) -> int:
        return self.sim.now()

    def run_until(self, pred: Callable[[], bool], limit_ns: int = VIRTUAL_LIMIT_NS, what: str = "run") -> None:
        if not self.sim.run_until(pred, limit_ns):
            raise BenchTimeout(f"{what} did not finish within {limit_ns / 1e9:.0f} s of virtual time")

    def settle(self) -> None:
        """Let trailing ACKs and timers drain."""
        self.sim.run_until(lambda: self.a.idle() and self.b.idle(), VIRTUAL_LIMIT_NS)


class UdpPair:
    """Engines on real UDP sockets, each driven by its own reactor thread.
    With ``peer`` set only the local side exists and connects to a remote
    ``balboa bench --role server``; timings are wall clock."""

    def __init__(self, host: str, engine_cfg: EngineConfig, size: int, qps: int = 1, services=(),
                 services_b=None, aes_key: Optional[bytes] = None, seed: int = 0, peer: Optional[str] = None):
        cfg = dc_replace(engine_cfg, timeout_ns=UDP_TIMEOUT_NS)
        self.reactors = []
        self.a = self._engine(host, dc_replace(cfg, local_ip=host, seed=seed), "a")
        if peer is None:
            self.b = self._engine(host, dc_replace(cfg, local_ip=host, seed=seed + 1), "b")
            self.handles = [connect_local(self.a, self.b, size, services, aes_key, services_b) for _ in range(qps)]
        else:
            self.b = None
            phost, port = peer.rsplit(":", 1)
            self.handles = [(init_rdma(self.a, size, int(port), peer=phost, services=services, aes_key=aes_key),
                             None) for _ in range(qps)]

    def _engine(self, host: str, cfg: EngineConfig, name: str) -> Engine:
        reactor = ThreadedReactor(f"balboa-{name}")
        link = UdpLink((host, 0), mtu=cfg.mtu)
        eng = Engine(cfg, link, reactor, name)
        self.reactors.append(reactor)
        reactor.start()
        return eng

    @property
    def ha(self) -> RdmaHandle:
        return self.handles[0][0]

    @property
    def hb(self) -> Optional[RdmaHandle]:
        return self.handles[0][1]

    def now(self) -> int:
        return ThreadedReactor.now()

    def run_until(self, pred: Callable[[], bool], limit_ns: int = 60 * 10**9, what: str = "run") -> None:
        if not self.reactors[0].run_until(pred, limit_ns):
            raise BenchTimeout(f"{what} did not finish within {limit_ns / 1e9:.0f} s")

    def settle(self) -> None:
        engines = [e for e in (self.a, self.b) if e is not None]
        self.reactors[0].run_until(lambda: all(e.idle() for e in engines), 10 * 10**9)

    def close(self) -> None:
        for r in self.reactors:
            r.stop()
        for e in (self.a, self.b):
            if e is not None:
                e.link.close()


def make_pair(spec: BenchSpec, size: int, **kw):
    if spec.udp:
        if spec.peer is not None and kw.get("services_b"):
            raise ValueError(f"{spec.mode} needs both endpoints in process")
        return UdpPair(spec.udp_host, spec.engine, size, peer=spec.peer, seed=spec.seed, **kw)
    return SimPair(spec.link_cfg(), spec.engine, size, seed=spec.seed, **kw)


def close_pair(pair) -> None:
    if isinstance(pair, UdpPair):
        pair.close()


def serve(host: str, oob_port: int, size: int, duration: Optional[float] = None,
          engine_cfg: Optional[EngineConfig] = None, services=(), aes_key: Optional[bytes] = None) -> list:
    """Passive endpoint for ``--role server``: every client connection on
    ``oob_port`` gets a fresh QP and buffer.  Serves until ``duration``
    seconds pass (forever if None)."""
    cfg = dc_replace(engine_cfg or EngineConfig(), timeout_ns=UDP_TIMEOUT_NS, local_ip=host)
    reactor = ThreadedReactor("balboa-server").start()
    eng = Engine(cfg, UdpLink((host, 0), mtu=cfg.mtu), reactor, "server")
    handles = []
    deadline = None if duration is None else time.monotonic() + duration
    try:
        while deadline is None or time.monotonic() < deadline:
            wait = 1.0 if deadline is None else max(0.01, min(1.0, deadline - time.monotonic()))
            try:
                h = init_rdma(eng, size, oob_port, services=services, aes_key=aes_key, bind=host, timeout=wait)
            except OobTimeout:
                continue
            h.buffer[:] = random.Random(len(handles)).randbytes(size)
            handles.append(h)
    except KeyboardInterrupt:
        pass
    finally:
        reactor.stop()
        eng.link.close()
    return handles


def _sim_only(spec: BenchSpec) -> None:
    if spec.udp:
        raise ValueError(f"{spec.mode} compares runs on identical virtual timing and needs a simulated link")


def _fill(buf: bytearray, seed: int) -> None:
    buf[:] = random.Random(seed).randbytes(len(buf))


def _oper(op: str) -> Oper:
    if op not in ("write", "read"):
        raise ValueError(f"op must be write or read, not {op!r}")
    return Oper.REMOTE_RDMA_WRITE if op == "write" else Oper.REMOTE_RDMA_READ


def _batch(pair: SimPair, h: RdmaHandle, oper: Oper, size: int, batch: int, region: int) -> tuple:
    """Post ``batch`` operations and wait for them.  Returns (t0, t_end)."""
    before = h.check_completed(oper)
    t0 = pair.now()
    for i in range(batch):
        off = (i * size) % max(1, region - size + 1)
        h.invoke(oper, SgEntry(size, off, off))
    pair.run_until(lambda: h.check_completed(oper) >= before + batch, what=f"{oper.name} batch")
    return t0, max(e.timestamp for e in h.completions(oper)[-batch:])


# ------------------------------------------------------------ latency

def run_latency(spec: BenchSpec) -> BenchResult:
    res = BenchResult(spec)
    lcfg = spec.link_cfg()
    region = max(spec.sizes)
    pair = make_pair(spec, region)
    ha, hb = pair.ha, pair.hb
    _fill(ha.buffer, spec.seed)
    oper = _oper(spec.op)
    means = []
    try:
        for size in spec.sizes:
            half, one_way = [], []
            for _ in range(spec.reps):
                before = hb.check_completed(Oper.LOCAL_WRITE) if hb else 0
                t0, t1 = _batch(pair, ha, oper, size, 1, region)
                half.append((t1 - t0) / 2 / 1e3)
                if hb and oper == Oper.REMOTE_RDMA_WRITE and hb.check_completed(Oper.LOCAL_WRITE) > before:
                    ev = hb.completions(Oper.LOCAL_WRITE)[-1]
                    one_way.append((ev.timestamp - t0) / 1e3)
                pair.settle()
            row = stats_row(res, spec.op, size, 0, "half_rtt", "us", half)
            means.append(row.mean)
            res.check(f"p5<=p95 size={size}", row.p5 <= row.p95)
            if one_way:
                ow = stats_row(res, spec.op, size, 0, "one_way", "us", one_way)
                if spec.breakdown and not spec.udp:
                    _breakdown(res, spec, pair, size, ow.mean, lcfg)
    finally:
        close_pair(pair)
    mono = all(b >= a - 1e-9 for a, b in zip(means, means[1:]))
    if not spec.udp and lcfg.loss_prob == 0 and lcfg.delay_min_us == lcfg.delay_max_us:
        res.check("latency non-decreasing in size", mono, " ".join(f"{m:.3f}" for m in means))
    return res


def _breakdown(res: BenchResult, spec: BenchSpec, pair: SimPair, size: int, e2e_us: float, lcfg: LinkConfig):
    """Per-stage virtual latency of the first packet of a message."""
    mtu = spec.engine.mtu
    first = min(size, mtu)
    hdr = 20 + 8 + 12 + 16 + 4
    nbytes = hdr + first + (-first % 4)
    stages = dict(pair.a.pipeline.tx_stages(nbytes))
    ser = int(round(nbytes * 1e9 / lcfg.bandwidth_cap)) if lcfg.bandwidth_cap else 0
    stages["wire"] = ser + int(1000.0 * lcfg.delay_min_us)
    stages.update(pair.b.pipeline.rx_stages(nbytes))
    total = 0.0
    for name, ns in stages.items():
        total += ns / 1e3
        res.row(spec.op, size, 0, f"stage_{name}", "us", ns / 1e3, ns / 1e3, ns / 1e3, 1)
    res.check(f"stage sum <= end-to-end size={size}", total <= e2e_us + 1e-9, f"{total:.3f} <= {e2e_us:.3f}")


# --------------------------------------------------------- throughput

def run_throughput(spec: BenchSpec) -> BenchResult:
    res = BenchResult(spec)
    lcfg = spec.link_cfg()
    oper = _oper(spec.op)
    region = max(spec.sizes) * min(spec.batch, 4)
    means = []
    for size in spec.sizes:
        pair = make_pair(spec, region)
        ha, hb = pair.ha, pair.hb
        if oper == Oper.REMOTE_RDMA_WRITE:
            _fill(ha.buffer, spec.seed)
        elif hb is not None:
            _fill(hb.buffer, spec.seed)
        receiver = pair.b if oper == Oper.REMOTE_RDMA_WRITE else pair.a
        samples = []
        try:
            for _ in range(spec.reps):
                t0, t1 = _batch(pair, ha, oper, size, spec.batch, region)
                samples.append(spec.batch * size / ((t1 - t0) / 1e9) / 1e6)
            pair.settle()
        finally:
            close_pair(pair)
        moved = receiver.delivery_stats.bytes if receiver is not None else 0
        row = stats_row(res, spec.op, size, 0, "throughput", "MB/s", samples, moved)
        means.append(row.mean)
        if receiver is not None and lcfg.loss_prob == 0:
            res.check(f"bytes moved size={size}", moved == spec.batch * spec.reps * size,
                      f"{moved} == {spec.batch * spec.reps * size}")
        if lcfg.bandwidth_cap and size >= SATURATION_SIZE and lcfg.loss_prob == 0:
            cap = lcfg.bandwidth_cap / 1e6
            res.check(f"saturation size={size}", row.mean >= 0.9 * cap, f"{row.mean:.1f} >= 0.9*{cap:.1f} MB/s")
    if not spec.udp and lcfg.loss_prob == 0:
        below = [m for s, m in zip(spec.sizes, means) if s <= SATURATION_SIZE]
        res.check("throughput non-decreasing up to saturation",
                  all(b >= a * (1 - 1e-9) for a, b in zip(below, below[1:])), " ".join(f"{m:.1f}" for m in below))
    return res


# ------------------------------------------------------------ multiqp

def share_window(completions: list, size: int) -> tuple:
    """Per-QP bytes completed up to the moment the first QP finishes, and
    the window length.  ``completions`` maps qp index to sorted times."""
    end = min(t[-1] for t in completions.values() if t)
    shares = {q: size * sum(1 for x in ts if x <= end) for q, ts in completions.items()}
    return shares, end


def _multiqp_reps(spec, pair, oper, size, region, per_qp, aggregate) -> None:
    nq = len(pair.handles)
    for _ in range(spec.reps):
        before = [ha.check_completed(oper) for ha, _ in pair.handles]
        t0 = pair.now()
        for i in range(spec.batch):
            for ha, _ in pair.handles:
                ha.invoke(oper, SgEntry(size, i * size % region, i * size % region))
        pair.run_until(lambda: all(ha.check_completed(oper) >= b + spec.batch
                                   for (ha, _), b in zip(pair.handles, before)), what="multiqp batch")
        times = {q: sorted(e.timestamp for e in ha.completions(oper)[-spec.batch:])
                 for q, (ha, _) in enumerate(pair.handles)}
        shares, end = share_window(times, size)
        window = (end - t0) / 1e9
        for q in range(nq):
            per_qp[q].append(shares[q] / window / 1e6)
        aggregate.append(sum(shares.values()) / window / 1e6)


def run_multiqp(spec: BenchSpec) -> BenchResult:
    res = BenchResult(spec)
    lcfg = spec.link_cfg()
    size = spec.sizes[0] if spec.sizes != DEFAULT_SIZES else SATURATION_SIZE
    nq = spec.qps if spec.qps >= 2 else 8
    oper = _oper(spec.op)
    region = size * spec.batch
    pair = make_pair(spec, region, qps=nq)
    for i, (ha, hb) in enumerate(pair.handles):
        if hb is not None:
            _fill(hb.buffer, spec.seed + i)
    per_qp = {q: [] for q in range(nq)}
    aggregate = []
    try:
        _multiqp_reps(spec, pair, oper, size, region, per_qp, aggregate)
    finally:
        close_pair(pair)
    agg = float(np.mean(aggregate))
    stats_row(res, spec.op, size, -1, "aggregate", "MB/s", aggregate)
    cap = lcfg.bandwidth_cap / 1e6 if lcfg.bandwidth_cap else None
    for q in range(nq):
        row = stats_row(res, spec.op, size, q, "qp_share", "MB/s", per_qp[q])
        if not spec.udp:
            res.check(f"qp {q} share within 10% of aggregate/{nq}", abs(row.mean - agg / nq) <= 0.1 * agg / nq,
                      f"{row.mean:.2f} vs {agg / nq:.2f} MB/s")
    if cap and not spec.udp:
        res.check("shares sum <= cap", agg <= cap * 1.000001, f"{agg:.1f} <= {cap:.1f} MB/s")
    return res


# -------------------------------------------------------- aes_compare

def run_aes_compare(spec: BenchSpec) -> BenchResult:
    """On-path AES over the simulated link versus the same transform run on
    a host thread.  Host numbers are wall-clock and reported only."""
    _sim_only(spec)
    res = BenchResult(spec)
    lcfg = spec.link_cfg()
    sizes = [s - s % 16 or 16 for s in spec.sizes]
    region = max(sizes) * min(spec.batch, 4)
    for size in sizes:
        pair = SimPair(lcfg, spec.engine, region, services=("aes",), aes_key=AES_KEY, seed=spec.seed)
        ha, hb = pair.ha, pair.hb
        _fill(ha.buffer, spec.seed)
        on_path, host = [], []
        for _ in range(spec.reps):
            t0, t1 = _batch(pair, ha, Oper.REMOTE_RDMA_WRITE, size, spec.batch, region)
            on_path.append(spec.batch * size / ((t1 - t0) / 1e9) / 1e6)
            data = bytes(ha.buffer[:size])
            w0 = time.perf_counter()
            ct = aes_encrypt(AES_KEY, data)
            pt = aes_decrypt(AES_KEY, ct)
            host.append(2 * size / (time.perf_counter() - w0) / 1e6)
        pair.settle()
        stats_row(res, "write", size, 0, "on_path_throughput", "MB/s", on_path)
        stats_row(res, "write", size, 0, "host_aes_throughput", "MB/s", host)
        span = min(region, spec.batch * size)
        res.check(f"roundtrip size={size}", hb.buffer[:span] == ha.buffer[:span] and pt == data)
    return res


# ------------------------------------------------------- dpi_overhead

def run_dpi_overhead(spec: BenchSpec) -> BenchResult:
    """Identical traffic with and without the inspector: delivered bytes,
    completion counts and virtual timing must match."""
    _sim_only(spec)
    res = BenchResult(spec)
    lcfg = spec.link_cfg()
    region = max(spec.sizes) * min(spec.batch, 4)
    for size in spec.sizes:
        outcome = {}
        for label, chain in (("off", ()), ("on", ("dpi",))):
            pair = SimPair(lcfg, spec.engine, region, services=chain, seed=spec.seed)
            ha, hb = pair.ha, pair.hb
            _fill(ha.buffer, spec.seed)
            samples, wall = [], time.perf_counter()
            for _ in range(spec.reps):
                t0, t1 = _batch(pair, ha, Oper.REMOTE_RDMA_WRITE, size, spec.batch, region)
                samples.append(spec.batch * size / ((t1 - t0) / 1e9) / 1e6)
            pair.settle()
            wall = time.perf_counter() - wall
            stats_row(res, "write", size, 0, f"throughput_dpi_{label}", "MB/s", samples)
            res.row("write", size, 0, f"wall_dpi_{label}", "s", wall, wall, wall, 1)
            outcome[label] = (hashlib.sha256(bytes(hb.buffer)).hexdigest(), hb.check_completed(Oper.LOCAL_WRITE),
                              ha.check_completed(Oper.REMOTE_RDMA_WRITE), samples)
        off, on = outcome["off"], outcome["on"]
        res.check(f"delivered bytes identical size={size}", off[0] == on[0])
        res.check(f"completion counts identical size={size}", off[1:3] == on[1:3])
        res.check(f"virtual throughput identical size={size}", off[3] == on[3])
    return res


# ------------------------------------------------------ preproc_paths

def dlrm_records(n: int, seed: int) -> bytes:
    rng = np.random.default_rng(seed)
    from .services.dlrm import RECORD_DTYPE
    rec = np.empty(n, dtype=RECORD_DTYPE)
    rec["dense"] = (rng.standard_normal((n, 13)) * 1000).astype(np.float32)
    rec["sparse"] = rng.integers(0, 2**32, size=(n, 26), dtype=np.uint64).astype(np.uint32)
    return rec.tobytes()


ROUTES = {1: "host_transform", 2: "on_path_staged", 3: "on_path_direct"}


def run_preproc_paths(spec: BenchSpec) -> BenchResult:
    """Three delivery topologies for DLRM records: (1) raw delivery to host,
    transform on a host thread, copy to the sink; (2) on-path transform,
    host staging copy; (3) on-path transform straight into the sink.  Host
    work is charged to virtual time at the configured per-byte costs."""
    _sim_only(spec)
    res = BenchResult(spec)
    lcfg = spec.link_cfg()
    counts = sorted({max(1, size // RECORD_WIDTH) for size in spec.sizes})  # whole records only
    for n in counts:
        nbytes = n * RECORD_WIDTH
        data = dlrm_records(n, spec.seed)
        digests, tput = {}, {}
        for route in (1, 2, 3):
            chain = () if route == 1 else ("dlrm_preproc",)
            pair = SimPair(lcfg, spec.engine, nbytes, services=(), services_b=chain, seed=spec.seed)
            ha, hb = pair.ha, pair.hb
            sink = pair.b.add_sink("gpu", nbytes)
            mode = {1: RouteMode.HOST, 2: RouteMode.STAGED, 3: RouteMode.DIRECT}[route]
            pair.b.set_route(hb.qpn, Route(mode, sink="gpu" if route != 1 else None))
            ha.buffer[:] = data
            samples, lat = [], []
            for _ in range(spec.reps):
                t0, t1 = _batch(pair, ha, Oper.REMOTE_RDMA_WRITE, nbytes, 1, nbytes)
                cost = 0.0
                if route == 1:
                    sink.write(0, preprocess_records(hb.buffer[:nbytes]))
                    cost = nbytes * (spec.host_ns_per_byte + spec.copy_ns_per_byte)
                elif route == 2:
                    cost = nbytes * spec.copy_ns_per_byte
                elapsed = (t1 - t0) + cost
                samples.append(nbytes / (elapsed / 1e9) / 1e6)
                lat.append(elapsed / 1e3)
                pair.settle()
            stats_row(res, "write", nbytes, route, f"throughput_{ROUTES[route]}", "MB/s", samples)
            stats_row(res, "write", nbytes, route, f"latency_{ROUTES[route]}", "us", lat)
            st = pair.b.delivery_stats
            res.row("write", nbytes, route, f"staging_copies_{ROUTES[route]}", "count",
                    st.staging_copies, st.staging_copies, st.staging_copies, 1)
            digests[route] = hashlib.sha256(bytes(sink.buf)).hexdigest()
            tput[route] = float(np.mean(samples))
            if route == 3:
                res.check(f"route 3 no host staging size={nbytes}", st.staging_copies == 0 and st.host_writes == 0,
                          f"copies={st.staging_copies} host_writes={st.host_writes}")
        expect = hashlib.sha256(preprocess_records(data)).hexdigest()
        res.check(f"sink contents identical size={nbytes}", len(set(digests.values())) == 1 and digests[3] == expect)
        res.check(f"route 3 throughput >= route 1 size={nbytes}", tput[3] >= tput[1],
                  f"{tput[3]:.1f} >= {tput[1]:.1f} MB/s")
    return res


RUNNERS = {
    "latency": run_latency, "throughput": run_throughput, "multiqp": run_multiqp,
    "aes_compare": run_aes_compare, "dpi_overhead": run_dpi_overhead, "preproc_paths": run_preproc_paths,
}


def run(spec: BenchSpec) -> BenchResult:
    return RUNNERS[spec.mode](spec)
