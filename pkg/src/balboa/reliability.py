"""Retransmission buffer, transport timer and the TX stream multiplexer.

Every transmitted data packet is kept as a complete wire image until a
cumulative acknowledgement covers its PSN.  Recovery is go-back-N: a
replay resends all retained images of the QP from a given PSN onward.
"""
from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass
from enum import IntEnum
from typing import Callable, Iterator, Optional

from .qp import HALF_WINDOW, psn_add, psn_diff

DEFAULT_RETRANS_CAPACITY = 16 * 1024 * 1024
DEFAULT_TIMEOUT_NS = 50_000_000  # simulated links
UDP_TIMEOUT_NS = 200_000_000
DEFAULT_MAX_RETRIES = 7
DEFAULT_TICK_NS = 1_000_000

log = logging.getLogger(__name__)


@dataclass
class RetransEntry:
    qpn: int
    first_psn: int
    images: list
    enqueue_time: int = 0
    retries_used: int = 0

    @property
    def nbytes(self) -> int:
        return sum(len(i) for i in self.images)

    @property
    def last_psn(self) -> int:
        return psn_add(self.first_psn, len(self.images) - 1)


class RetransBuffer:
    def __init__(self, capacity_bytes: int = DEFAULT_RETRANS_CAPACITY):
        self.capacity_bytes = capacity_bytes
        self.used_bytes = 0
        self.unknown_replays = 0
        self.stalls = 0
        self._qps: dict[int, deque] = {}

    def has_space(self, nbytes: int) -> bool:
        return self.used_bytes + nbytes <= self.capacity_bytes

    def insert(self, entry: RetransEntry) -> bool:
        """Retain an entry.  Returns False, leaving the buffer untouched, when
        the entry does not fit; the caller must hold back transmission."""
        n = entry.nbytes
        if not self.has_space(n):
            self.stalls += 1
            return False
        q = self._qps.setdefault(entry.qpn, deque())
        if q:
            tail = q[-1]
            if psn_add(tail.last_psn, 1) != entry.first_psn:
                raise ValueError("retained PSNs of a QP must be contiguous")
        q.append(entry)
        self.used_bytes += n
        return True

    def entries(self, qpn: int) -> list:
        return list(self._qps.get(qpn, ()))

    def oldest(self, qpn: int) -> Optional[RetransEntry]:
        q = self._qps.get(qpn)
        return q[0] if q else None

    def packets(self, qpn: int) -> int:
        return sum(len(e.images) for e in self._qps.get(qpn, ()))

    def release(self, qpn: int, acked_psn: int) -> int:
        """Free every image with PSN <= ``acked_psn``.  Stale values (behind
        the oldest retained PSN) free nothing.  Returns packets freed."""
        q = self._qps.get(qpn)
        if not q:
            return 0
        d = psn_diff(acked_psn, q[0].first_psn)
        if d >= HALF_WINDOW:
            return 0
        todo = d + 1
        freed = 0
        while q and todo:
            e = q[0]
            if len(e.images) <= todo:
                q.popleft()
                self.used_bytes -= e.nbytes
                todo -= len(e.images)
                freed += len(e.images)
            else:
                gone = e.images[:todo]
                e.images = e.images[todo:]
                e.first_psn = psn_add(e.first_psn, todo)
                self.used_bytes -= sum(len(i) for i in gone)
                freed += todo
                todo = 0
        if not q:
            del self._qps[qpn]
        return freed

    def replay(self, qpn: int, from_psn: int, now: int = 0, retry: bool = False) -> list:
        """Images of ``qpn`` from ``from_psn`` onward as (psn, image) pairs.
        An unknown PSN yields nothing and is counted.  Replayed entries get a
        fresh enqueue time; ``retry`` marks a timeout-driven replay."""
        q = self._qps.get(qpn)
        if not q:
            self.unknown_replays += 1
            return []
        start = psn_diff(from_psn, q[0].first_psn)
        total = sum(len(e.images) for e in q)
        if start >= total:
            self.unknown_replays += 1
            return []
        out = []
        idx = 0
        for e in q:
            for i, img in enumerate(e.images):
                if idx >= start:
                    out.append((psn_add(e.first_psn, i), img))
                idx += 1
            if idx > start:
                e.enqueue_time = now
                if retry:
                    e.retries_used += 1
        return out

    def drop_qp(self, qpn: int) -> int:
        q = self._qps.pop(qpn, None)
        if not q:
            return 0
        n = sum(e.nbytes for e in q)
        self.used_bytes -= n
        return sum(len(e.images) for e in q)


@dataclass
class Expiry:
    qpn: int
    exhausted: bool
    retries_used: int


class TransportTimer:
    """Per-QP retransmission deadline.  The deadline restarts whenever the
    QP makes acknowledgement progress or replays."""

    def __init__(self, timeout_ns: int = DEFAULT_TIMEOUT_NS, max_retries: int = DEFAULT_MAX_RETRIES,
                 tick_ns: int = DEFAULT_TICK_NS):
        self.timeout_ns = timeout_ns
        self.max_retries = max_retries
        self.tick_ns = tick_ns
        self._deadline: dict[int, int] = {}
        self._retries: dict[int, int] = {}

    def armed(self, qpn: int) -> bool:
        return qpn in self._deadline

    def deadline(self, qpn: int) -> Optional[int]:
        return self._deadline.get(qpn)

    def next_deadline(self) -> Optional[int]:
        return min(self._deadline.values()) if self._deadline else None

    def retries(self, qpn: int) -> int:
        return self._retries.get(qpn, 0)

    def arm(self, qpn: int, now: int) -> None:
        """Start the deadline if it is not already running."""
        if qpn not in self._deadline:
            self._deadline[qpn] = now + self.timeout_ns

    def progress(self, qpn: int, now: int, outstanding: bool) -> None:
        self._retries[qpn] = 0
        if outstanding:
            self._deadline[qpn] = now + self.timeout_ns
        else:
            self._deadline.pop(qpn, None)

    def restart(self, qpn: int, now: int) -> None:
        """Restart the deadline without touching the retry count."""
        self._deadline[qpn] = now + self.timeout_ns

    def disarm(self, qpn: int) -> None:
        self._deadline.pop(qpn, None)
        self._retries.pop(qpn, None)

    def poll(self, now: int) -> list:
        """Expired QPs, each listed once.  A QP that has used all retries is
        reported exhausted and disarmed; otherwise its retry count grows and
        the deadline restarts."""
        out = []
        for qpn, dl in sorted(self._deadline.items()):
            if dl > now:
                continue
            used = self._retries.get(qpn, 0)
            if used >= self.max_retries:
                out.append(Expiry(qpn, True, used))
                self.disarm(qpn)
            else:
                self._retries[qpn] = used + 1
                self._deadline[qpn] = now + self.timeout_ns
                out.append(Expiry(qpn, False, used + 1))
        return out


class Source(IntEnum):
    WRITE = 0
    READ_RESPONSE = 1


class StreamMux:
    """Merges the WRITE stream (local requests, including READ requests) and
    the READ RESPONSE stream.  Sources alternate whenever both have an
    eligible command; inside a source QPs are served round robin.  Commands
    are selected whole, so interleaving happens at message granularity."""

    def __init__(self):
        self._queues = ({}, {})
        self._rings = (deque(), deque())
        self._prefer = Source.WRITE
        self.selections = [0, 0]

    def push(self, source: Source, qpn: int, cmd) -> None:
        queues = self._queues[source]
        q = queues.get(qpn)
        if q is None:
            q = queues[qpn] = deque()
            self._rings[source].append(qpn)
        q.append(cmd)

    def pending(self, source: Optional[Source] = None) -> int:
        srcs = (Source.WRITE, Source.READ_RESPONSE) if source is None else (source,)
        return sum(len(q) for s in srcs for q in self._queues[s].values())

    def commands(self, qpn: int) -> Iterator:
        for s in (Source.WRITE, Source.READ_RESPONSE):
            yield from self._queues[s].get(qpn, ())

    def _scan(self, source: Source, eligible: Callable) -> Optional[tuple]:
        ring = self._rings[source]
        queues = self._queues[source]
        for i, qpn in enumerate(ring):
            cmd = queues[qpn][0]
            if eligible(qpn, cmd):
                ring.rotate(-(i + 1))  # next scan starts after this QP
                return source, qpn, cmd
        return None

    def select(self, eligible: Callable) -> Optional[tuple]:
        """Pick the next (source, qpn, command) whose head command satisfies
        ``eligible(qpn, cmd)``.  The command stays queued until ``pop``."""
        first = self._prefer
        second = Source(1 - first)
        hit = self._scan(first, eligible) or self._scan(second, eligible)
        if hit is not None:
            self._prefer = Source(1 - hit[0])
            self.selections[hit[0]] += 1
        return hit

    def pop(self, source: Source, qpn: int):
        queues = self._queues[source]
        q = queues[qpn]
        cmd = q.popleft()
        if not q:
            del queues[qpn]
            self._rings[source].remove(qpn)
        return cmd

    def drop_qp(self, qpn: int) -> list:
        out = []
        for s in (Source.WRITE, Source.READ_RESPONSE):
            q = self._queues[s].pop(qpn, None)
            if q:
                out.extend(q)
                self._rings[s].remove(qpn)
        return out


def mux_select(mux: StreamMux, eligible: Callable = lambda qpn, cmd: True) -> Optional[tuple]:
    return mux.select(eligible)
