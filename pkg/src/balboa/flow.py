"""Flow control: per-QP outstanding-packet budget and the receive credit pool.

The sender may keep at most ``max_outstanding`` unacknowledged packets per
QP.  Requests that do not fit wait in FIFO order and are re-evaluated when
acknowledgements return budget.  The receiver holds a pool of credits, one
per accepted data packet, returned when the host side drains the delivery.
"""
from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from enum import IntEnum

DEFAULT_MAX_OUTSTANDING = 128
DEFAULT_RX_CREDITS = 1024

log = logging.getLogger(__name__)


class Admission(IntEnum):
    ADMITTED = 0
    QUEUED = 1


@dataclass
class QpBudget:
    max_outstanding: int = DEFAULT_MAX_OUTSTANDING
    in_flight: int = 0
    waiting: deque = field(default_factory=deque)
    peak: int = 0
    over_returns: int = 0

    @property
    def available(self) -> int:
        return self.max_outstanding - self.in_flight


def admit_tx(budget: QpBudget, n_packets: int, request=None) -> Admission:
    """Admit a request of ``n_packets`` if it fits, else queue it.  A request
    never overtakes earlier queued ones."""
    if n_packets <= 0:
        raise ValueError("a request carries at least one packet")
    if not budget.waiting and n_packets <= budget.available:
        budget.in_flight += n_packets
        budget.peak = max(budget.peak, budget.in_flight)
        return Admission.ADMITTED
    budget.waiting.append((n_packets, request))
    return Admission.QUEUED


def try_admit(budget: QpBudget, n_packets: int) -> bool:
    """Non-queuing admission used by a scheduler that owns its own queue."""
    if n_packets <= budget.available:
        budget.in_flight += n_packets
        budget.peak = max(budget.peak, budget.in_flight)
        return True
    return False


def return_tx(budget: QpBudget, n_packets: int) -> list:
    """Give back budget for acknowledged packets and release queued requests
    that now fit, in arrival order."""
    if n_packets > budget.in_flight:
        budget.over_returns += 1
        log.warning("budget over-return by %d packets", n_packets - budget.in_flight)
        n_packets = budget.in_flight
    budget.in_flight -= n_packets
    released = []
    while budget.waiting and budget.waiting[0][0] <= budget.available:
        n, req = budget.waiting.popleft()
        budget.in_flight += n
        budget.peak = max(budget.peak, budget.in_flight)
        released.append(req)
    return released


@dataclass
class CreditPool:
    capacity: int = DEFAULT_RX_CREDITS
    available: int = -1
    over_returns: int = 0
    exhausted_drops: int = 0

    def __post_init__(self):
        if self.available < 0:
            self.available = self.capacity


def consume_rx_credit(pool: CreditPool) -> bool:
    if pool.available <= 0:
        pool.exhausted_drops += 1
        return False
    pool.available -= 1
    return True


def return_rx_credit(pool: CreditPool, n: int = 1) -> None:
    room = pool.capacity - pool.available
    if n > room:
        pool.over_returns += 1
        log.warning("credit over-return by %d", n - room)
        n = room
    pool.available += n


class FlowStrategy:
    """Hook for congestion control.  The default keeps the static budget;
    a strategy may resize ``max_outstanding`` from ACK and NAK feedback."""

    name = "static"

    def on_ack(self, budget: QpBudget, acked: int, now: int) -> None:
        pass

    def on_nak(self, budget: QpBudget, now: int) -> None:
        pass

    def on_timeout(self, budget: QpBudget, now: int) -> None:
        pass
