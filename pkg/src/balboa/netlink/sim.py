"""Discrete-event simulator with a virtual nanosecond clock, plus a
point-to-point link model with loss, reordering, duplication, delay jitter
and an optional bandwidth cap.

Every packet draws its fate from a seeded RNG in a fixed order, so a run is
a pure function of the seed and the offered traffic.  Arrivals on one
direction are FIFO except for packets explicitly held back by the reorder
model, which are released right after the next packet.
"""
from __future__ import annotations

import hashlib
import heapq
import random
from dataclasses import dataclass, replace
from typing import Callable, Optional

from ..errors import EndpointClosed, Oversized

MAX_HEADER = 20 + 8 + 12 + 16 + 4  # IP, UDP, BTH, RETH, ICRC


class _Event:
    __slots__ = ("time", "fn", "args", "cancelled")

    def __init__(self, time, fn, args):
        self.time = time
        self.fn = fn
        self.args = args
        self.cancelled = False

    def cancel(self) -> None:
        self.cancelled = True


class Simulation:
    """Event loop driving engines and links in virtual time."""

    def __init__(self):
        self._now = 0
        self._heap: list = []
        self._seq = 0
        self.events_run = 0

    def now(self) -> int:
        return self._now

    def call_at(self, t: int, fn: Callable, *args) -> _Event:
        ev = _Event(max(int(t), self._now), fn, args)
        self._seq += 1
        heapq.heappush(self._heap, (ev.time, self._seq, ev))
        return ev

    def call_later(self, dt: int, fn: Callable, *args) -> _Event:
        return self.call_at(self._now + int(dt), fn, *args)

    def post(self, fn: Callable, *args) -> _Event:
        return self.call_at(self._now, fn, *args)

    def call_sync(self, fn: Callable, *args, timeout=None):
        return fn(*args)

    def pending(self) -> int:
        return sum(1 for _, _, ev in self._heap if not ev.cancelled)

    def next_time(self) -> Optional[int]:
        while self._heap and self._heap[0][2].cancelled:
            heapq.heappop(self._heap)
        return self._heap[0][0] if self._heap else None

    def step(self) -> bool:
        while self._heap:
            t, _, ev = heapq.heappop(self._heap)
            if ev.cancelled:
                continue
            self._now = t
            self.events_run += 1
            ev.fn(*ev.args)
            return True
        return False

    def run(self, until: Optional[int] = None) -> None:
        while True:
            t = self.next_time()
            if t is None or (until is not None and t > until):
                break
            self.step()
        if until is not None and until > self._now:
            self._now = until

    def run_until(self, predicate: Callable[[], bool], timeout_ns: Optional[int] = None) -> bool:
        """Run events until ``predicate`` holds.  Returns False if the
        virtual timeout passes or the simulation runs dry first."""
        deadline = None if timeout_ns is None else self._now + timeout_ns
        while not predicate():
            t = self.next_time()
            if t is None or (deadline is not None and t > deadline):
                if deadline is not None and deadline > self._now:
                    self._now = deadline
                return predicate()
            self.step()
        return True


@dataclass
class LinkConfig:
    loss_prob: float = 0.0
    reorder_prob: float = 0.0
    duplicate_prob: float = 0.0
    delay_min_us: float = 1.0
    delay_max_us: float = 1.0
    bandwidth_cap: float = 0.0  # bytes per second, 0 means uncapped
    mtu: int = 4096
    seed: int = 0
    hold_timeout_us: float = 100.0  # release of a held packet if nothing follows

    def __post_init__(self):
        for name in ("loss_prob", "reorder_prob", "duplicate_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")
        if self.delay_min_us < 0 or self.delay_max_us < self.delay_min_us:
            raise ValueError("need 0 <= delay_min_us <= delay_max_us")
        if self.bandwidth_cap < 0:
            raise ValueError("bandwidth_cap must be >= 0")

    def with_(self, **kw) -> "LinkConfig":
        return replace(self, **kw)


PROFILES = {
    "lossless": LinkConfig(),
    "lan": LinkConfig(delay_min_us=2.0, delay_max_us=4.0),
    "capped": LinkConfig(delay_min_us=2.0, delay_max_us=2.0, bandwidth_cap=1e9),
    "lossy": LinkConfig(loss_prob=0.05, reorder_prob=0.02, duplicate_prob=0.01,
                        delay_min_us=2.0, delay_max_us=6.0, bandwidth_cap=1.25e9),
    "blackhole": LinkConfig(loss_prob=1.0),
}


def link_profile(name: str) -> LinkConfig:
    try:
        return PROFILES[name]
    except KeyError:
        raise ValueError(f"unknown link profile {name!r}; known: {sorted(PROFILES)}") from None


@dataclass
class ChannelStats:
    sent: int = 0
    lost: int = 0
    duplicated: int = 0
    reordered: int = 0
    delivered: int = 0
    bytes_sent: int = 0
    bytes_delivered: int = 0
    first_send: Optional[int] = None
    last_departure: int = 0


class _Channel:
    """One direction of a link."""

    def __init__(self, sim: Simulation, cfg: LinkConfig, rng: random.Random, dst: "SimEndpoint", trace: bool):
        self.sim = sim
        self.cfg = cfg
        self.rng = rng
        self.dst = dst
        self.busy_until = 0
        self.last_arrival = 0
        self.held: Optional[list] = None  # [image, release_event]
        self.stats = ChannelStats()
        self.trace = hashlib.sha256() if trace else None
        self._ns_per_byte = 1e9 / cfg.bandwidth_cap if cfg.bandwidth_cap else 0.0

    def send(self, image: bytes, not_before: int) -> None:
        cfg, now = self.cfg, self.sim.now()
        start = max(now, not_before, self.busy_until)
        self.busy_until = start + int(round(len(image) * self._ns_per_byte))
        st = self.stats
        st.sent += 1
        st.bytes_sent += len(image)
        if st.first_send is None:
            st.first_send = start
        st.last_departure = self.busy_until
        r = self.rng.random
        u_loss, u_dup, u_reorder, u_delay = r(), r(), r(), r()
        delay_ns = 1000.0 * (cfg.delay_min_us + u_delay * (cfg.delay_max_us - cfg.delay_min_us))
        arrival = max(self.busy_until + int(delay_ns) + self.dst.rx_latency(len(image)), self.last_arrival)
        self.last_arrival = arrival
        lost = u_loss < cfg.loss_prob
        if self.trace is not None:
            self.trace.update(b"%d %d %d %d\n" % (st.sent, arrival, len(image), lost))
        held = self.held
        if lost:
            st.lost += 1
        elif held is None and u_reorder < cfg.reorder_prob:
            st.reordered += 1
            ev = self.sim.call_at(arrival + int(cfg.hold_timeout_us * 1000), self._release)
            self.held = [image, ev]
            return
        else:
            self.sim.call_at(arrival, self._deliver, image)
            if u_dup < cfg.duplicate_prob:
                st.duplicated += 1
                self.sim.call_at(arrival, self._deliver, image)
        if held is not None:
            self.held = None
            held[1].cancel()
            self.sim.call_at(arrival, self._deliver, held[0])

    def _release(self) -> None:
        if self.held is not None:
            image = self.held[0]
            self.held = None
            self.last_arrival = max(self.last_arrival, self.sim.now())
            self._deliver(image)

    def _deliver(self, image: bytes) -> None:
        self.stats.delivered += 1
        self.stats.bytes_delivered += len(image)
        self.dst._arrive(image)


class SimEndpoint:
    def __init__(self, name: str, mtu: int):
        self.name = name
        self.mtu = mtu
        self._out: Optional[_Channel] = None
        self._inbox: list = []
        self._listener: Optional[Callable[[], None]] = None
        self.closed = False
        self.rx_latency: Callable[[int], int] = lambda n: 0

    def set_listener(self, fn: Optional[Callable[[], None]]) -> None:
        self._listener = fn

    def send(self, image: bytes, dest=None, not_before: int = 0) -> None:
        if self.closed:
            raise EndpointClosed(f"endpoint {self.name} is closed")
        if len(image) > self.mtu + MAX_HEADER:
            raise Oversized(f"{len(image)}-byte image exceeds MTU {self.mtu} plus headers")
        self._out.send(bytes(image), not_before)

    def recv(self) -> Optional[bytes]:
        if self.closed:
            raise EndpointClosed(f"endpoint {self.name} is closed")
        return self._inbox.pop(0) if self._inbox else None

    def tx_free_at(self) -> int:
        return self._out.busy_until

    def _arrive(self, image: bytes) -> None:
        if self.closed:
            return
        self._inbox.append(image)
        if self._listener is not None:
            self._listener()

    def close(self) -> None:
        self.closed = True
        self._inbox.clear()

    @property
    def stats(self) -> ChannelStats:
        return self._out.stats


class SimLink:
    """Bidirectional link between endpoints ``a`` and ``b``.  Each direction
    may have its own configuration and draws from its own RNG stream."""

    def __init__(self, sim: Simulation, config: LinkConfig = LinkConfig(),
                 reverse: Optional[LinkConfig] = None, trace: bool = False):
        self.sim = sim
        self.config = config
        rev = reverse or config
        self.a = SimEndpoint("a", config.mtu)
        self.b = SimEndpoint("b", config.mtu)
        self.a._out = _Channel(sim, config, random.Random(config.seed * 2 + 1), self.b, trace)
        self.b._out = _Channel(sim, rev, random.Random(rev.seed * 2 + 2), self.a, trace)

    def trace_digest(self) -> str:
        h = hashlib.sha256()
        for ch in (self.a._out, self.b._out):
            if ch.trace is not None:
                h.update(ch.trace.digest())
        return h.hexdigest()
