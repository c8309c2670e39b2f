"""Routing of delivery commands to host memory or device sinks.

Three routes exist: ``host`` writes into the QP's registered buffer,
``direct`` writes straight into a named sink, and ``staged`` writes into the
host buffer and then copies to the sink.  A scatter list can split one
message across several targets.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from ..errors import BoundsError, UnknownSink

HOST = "host"


class RouteMode(str, Enum):
    HOST = "host"
    DIRECT = "direct"
    STAGED = "staged"


@dataclass
class MemoryRegion:
    vaddr: int
    size: int
    rkey: int
    buf: bytearray = field(repr=False, default=None)

    def __post_init__(self):
        if self.buf is None:
            self.buf = bytearray(self.size)

    def contains(self, vaddr: int, length: int) -> bool:
        return self.vaddr <= vaddr and vaddr + length <= self.vaddr + self.size

    def offset_of(self, vaddr: int) -> int:
        return vaddr - self.vaddr

    def write(self, offset: int, data) -> None:
        if offset < 0 or offset + len(data) > self.size:
            raise BoundsError(f"write [{offset}, {offset + len(data)}) outside region of {self.size}")
        self.buf[offset:offset + len(data)] = data

    def read(self, offset: int, length: int) -> bytes:
        if offset < 0 or offset + length > self.size:
            raise BoundsError(f"read [{offset}, {offset + length}) outside region of {self.size}")
        return bytes(self.buf[offset:offset + length])


@dataclass
class ScatterSegment:
    length: int
    target: str  # HOST or a sink name
    offset: int


@dataclass
class Route:
    mode: RouteMode = RouteMode.HOST
    sink: Optional[str] = None
    sink_offset: int = 0  # sink address of host offset 0
    scatter: Optional[list] = None


@dataclass
class DeliveryStats:
    host_writes: int = 0
    sink_writes: int = 0
    staging_copies: int = 0
    bytes: int = 0


def _pieces(cmd, route: Route):
    """(target, target_offset, host_offset, data) pieces of a command."""
    if not route.scatter:
        return [(None, cmd.offset, cmd.offset, cmd.payload)]
    out = []
    pos = cmd.msg_offset
    end = cmd.msg_offset + len(cmd.payload)
    seg_start = 0
    for seg in route.scatter:
        seg_end = seg_start + seg.length
        lo, hi = max(pos, seg_start), min(end, seg_end)
        if lo < hi:
            data = cmd.payload[lo - cmd.msg_offset:hi - cmd.msg_offset]
            host_off = cmd.offset + (lo - cmd.msg_offset)
            out.append((seg.target, seg.offset + (lo - seg_start), host_off, data))
        seg_start = seg_end
    covered = sum(len(p[3]) for p in out)
    if covered != len(cmd.payload):
        raise BoundsError("scatter list shorter than the message")
    return out


def route_delivery(cmd, route: Route, host: MemoryRegion, sinks: dict, stats: DeliveryStats) -> None:
    """Write one delivery command according to ``route``."""
    stats.bytes += len(cmd.payload)
    for target, offset, host_off, data in _pieces(cmd, route):
        if route.mode == RouteMode.HOST:
            if target in (None, HOST):
                host.write(offset, data)
                stats.host_writes += 1
            else:
                _sink(sinks, target).write(offset, data)
                stats.sink_writes += 1
            continue
        name = target if target not in (None, HOST) else route.sink
        sink = _sink(sinks, name)
        sink_off = offset if target not in (None, HOST) else route.sink_offset + offset
        if route.mode == RouteMode.DIRECT:
            sink.write(sink_off, data)
            stats.sink_writes += 1
        else:
            host.write(host_off, data)
            stats.host_writes += 1
            sink.write(sink_off, host.read(host_off, len(data)))
            stats.staging_copies += 1


def _sink(sinks: dict, name: Optional[str]) -> MemoryRegion:
    if name is None or name not in sinks:
        raise UnknownSink(f"no sink named {name!r}")
    return sinks[name]
