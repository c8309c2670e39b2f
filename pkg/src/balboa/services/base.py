"""Service interfaces and the per-QP service registry.

Two kinds of services exist.  On-path services transform payload bytes as
a stream, one stream per message and direction, and may hold back a
partial block between packets.  Parallel-path services see a read-only copy
of each inbound payload and return a verdict without touching the data.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntFlag
from typing import Callable, Optional

from ..errors import ExpansionRejected, UnknownService


class Direction(IntFlag):
    TX = 1
    RX = 2
    BOTH = 3


class Stream:
    """Byte stream through one on-path service for one message."""

    def feed(self, chunk: bytes) -> bytes:
        raise NotImplementedError

    def close(self) -> bytes:
        return b""


class BlockStream(Stream):
    """Applies ``fn`` to whole blocks and carries partial blocks forward;
    carried state is bounded by one block."""

    def __init__(self, block: int, fn: Callable[[bytes], bytes], on_residue: Callable[[int], None]):
        self.block = block
        self.fn = fn
        self.on_residue = on_residue
        self._carry = b""

    def feed(self, chunk: bytes) -> bytes:
        data = self._carry + bytes(chunk) if self._carry else bytes(chunk)
        cut = len(data) - len(data) % self.block
        self._carry = data[cut:]
        return self.fn(data[:cut]) if cut else b""

    def close(self) -> bytes:
        if self._carry:
            n = len(self._carry)
            self._carry = b""
            self.on_residue(n)
        return b""


class OnPathService:
    name = "identity"
    direction = Direction.BOTH
    expansion_factor = 1.0

    def open(self, ctx, direction: Direction) -> Stream:
        """Start a stream for one message of QP context ``ctx``."""
        raise NotImplementedError


@dataclass
class Verdict:
    malicious: bool = False
    score: float = 0.0


class ParallelPathService:
    name = "inspector"

    def inspect(self, payload: bytes) -> Verdict:
        raise NotImplementedError


@dataclass
class QpServices:
    tx: list = field(default_factory=list)
    rx: list = field(default_factory=list)
    inspectors: list = field(default_factory=list)

    @property
    def empty(self) -> bool:
        return not (self.tx or self.rx or self.inspectors)


class ServiceRegistry:
    """Maps service names to factories and QPNs to bound chains."""

    def __init__(self):
        self._factories: dict[str, Callable[[], object]] = {}
        self._bindings: dict[int, QpServices] = {}

    def add(self, name: str, factory: Callable[[], object]) -> None:
        self._factories[name] = factory

    def names(self) -> list:
        return sorted(self._factories)

    def create(self, name: str):
        try:
            return self._factories[name]()
        except KeyError:
            raise UnknownService(f"no service named {name!r}") from None

    def register_service(self, qpn: int, chain) -> QpServices:
        """Bind an ordered chain to a QP.  Entries are names or service
        objects; on-path services join the TX and/or RX chain according to
        their direction, inspectors run on RX.  RX services that would grow
        the payload are rejected here rather than on the datapath."""
        bound = QpServices()
        for item in chain:
            svc = self.create(item) if isinstance(item, str) else item
            if isinstance(svc, ParallelPathService):
                bound.inspectors.append(svc)
                continue
            if not isinstance(svc, OnPathService):
                raise UnknownService(f"{item!r} is not a service")
            if svc.direction & Direction.RX:
                if svc.expansion_factor > 1.0:
                    raise ExpansionRejected(
                        f"{svc.name} expands RX payloads by {svc.expansion_factor}")
                bound.rx.append(svc)
            if svc.direction & Direction.TX:
                bound.tx.append(svc)
        self._bindings[qpn] = bound
        return bound

    def unregister(self, qpn: int) -> None:
        self._bindings.pop(qpn, None)

    def bound(self, qpn: int) -> Optional[QpServices]:
        return self._bindings.get(qpn)


def run_chain(streams: list, chunk: bytes, final: bool) -> bytes:
    """Push a chunk through opened streams in order."""
    data = chunk
    for st in streams:
        out = st.feed(data) if data else b""
        if final:
            out += st.close()
        data = out
    return data
