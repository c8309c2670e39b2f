"""Verbs-style user surface: buffers, QP setup and one-sided operations.

A handle couples one registered buffer with one QP.  Setup exchanges a
single text line per side describing the local QP and buffer, either over
a TCP connection (``init_rdma``) or in process (``connect_local``).
"""
from __future__ import annotations

import re
import socket
from dataclasses import dataclass
from typing import Callable, Optional

from .engine import Engine
from .errors import BoundsError, CompletionTimeout, DescriptorMismatch, HandleClosed, OobTimeout, QpFailed
from .qp import QpConnection
from .rx import CompletionEvent, Oper
from .services.delivery import MemoryRegion

AES_BLOCK = 16
VADDR_BASE = 0x7F00_0000_0000

_LINE = re.compile(
    r"BALBOA1 qpn=([0-9a-f]{6}) psn=([0-9a-f]{6}) rkey=([0-9a-f]{8}) vaddr=([0-9a-f]{16}) "
    r"size=(\d+) ip=(\d{1,3}(?:\.\d{1,3}){3}) port=(\d+) aes=([0-9a-f]{32}|-)\n"
)


@dataclass
class OobQpDescriptor:
    qpn: int
    psn: int
    rkey: int
    vaddr: int
    size: int
    ip: str
    port: int
    aes_key: Optional[bytes] = None

    def to_line(self) -> str:
        aes = self.aes_key.hex() if self.aes_key is not None else "-"
        return (f"BALBOA1 qpn={self.qpn:06x} psn={self.psn:06x} rkey={self.rkey:08x} vaddr={self.vaddr:016x} "
                f"size={self.size} ip={self.ip} port={self.port} aes={aes}\n")

    @classmethod
    def from_line(cls, line: str) -> "OobQpDescriptor":
        m = _LINE.fullmatch(line)
        if m is None:
            raise DescriptorMismatch(f"malformed QP descriptor line: {line!r}")
        qpn, psn, rkey, vaddr, size, ip, port, aes = m.groups()
        if any(int(o) > 255 for o in ip.split(".")) or int(port) > 65535:
            raise DescriptorMismatch(f"bad address in descriptor: {ip}:{port}")
        return cls(int(qpn, 16), int(psn, 16), int(rkey, 16), int(vaddr, 16), int(size), ip, int(port),
                   None if aes == "-" else bytes.fromhex(aes))


@dataclass
class SgEntry:
    len: int
    local_offset: int = 0
    remote_offset: int = 0


@dataclass
class LocalEndpoint:
    """Locally reserved QP resources before the peer is known."""

    descriptor: OobQpDescriptor
    region: MemoryRegion


class RdmaHandle:
    def __init__(self, engine: Engine, local: LocalEndpoint, remote: OobQpDescriptor):
        self.engine = engine
        self.qpn = local.descriptor.qpn
        self.local = local.descriptor
        self.region = local.region
        self.remote = remote
        self.closed = False
        self._cq = engine.cqs[self.qpn]
        self.encrypted = local.descriptor.aes_key is not None

    @property
    def buffer(self) -> bytearray:
        return self.region.buf

    @property
    def local_vaddr(self) -> int:
        return self.local.vaddr

    @property
    def remote_vaddr(self) -> int:
        return self.remote.vaddr

    def _open(self) -> None:
        if self.closed:
            raise HandleClosed(f"handle for QP 0x{self.qpn:06x} is closed")

    def _check_sg(self, sg: SgEntry) -> None:
        if sg.len < 1:
            raise BoundsError("scatter-gather length must be at least 1 byte")
        if sg.local_offset < 0 or sg.local_offset + sg.len > self.region.size:
            raise BoundsError(f"local range [{sg.local_offset}, +{sg.len}) outside {self.region.size}-byte buffer")
        if sg.remote_offset < 0 or sg.remote_offset + sg.len > self.remote.size:
            raise BoundsError(f"remote range [{sg.remote_offset}, +{sg.len}) outside {self.remote.size}-byte region")
        if self.encrypted and sg.len % AES_BLOCK:
            raise BoundsError(f"encrypted QPs move multiples of {AES_BLOCK} bytes")

    def invoke(self, oper: Oper, sg: SgEntry) -> int:
        """Start a one-sided operation; returns its work request id."""
        self._open()
        self._check_sg(sg)
        eng = self.engine

        def post():
            ctx = eng.qps.lookup(self.qpn)
            if ctx.failed:
                raise QpFailed(f"QP 0x{self.qpn:06x} has failed")
            if oper == Oper.REMOTE_RDMA_WRITE:
                data = self.region.read(sg.local_offset, sg.len)
                return eng.post_write(self.qpn, data, self.remote.vaddr + sg.remote_offset)
            if oper == Oper.REMOTE_RDMA_READ:
                return eng.post_read(self.qpn, sg.len, self.remote.vaddr + sg.remote_offset, sg.local_offset)
            raise ValueError(f"{oper!r} is not a remote operation")

        return eng.reactor.call_sync(post)

    def check_completed(self, oper: Oper) -> int:
        self._open()
        return self._cq.count(oper)

    def reset_completed(self, oper: Optional[Oper] = None) -> None:
        self._open()
        self._cq.reset(oper)

    def completions(self, oper: Optional[Oper] = None) -> list:
        return [e for e in self._cq.events if oper is None or e.oper == oper]

    def wait_completed(self, oper: Oper, n: int, timeout_ns: int = 10_000_000_000, strict: bool = True) -> bool:
        """Wait until ``n`` completions of ``oper`` are counted.  On timeout
        raise CompletionTimeout, or return False when ``strict`` is off."""
        self._open()
        ok = self.engine.reactor.run_until(lambda: self._cq.count(oper) >= n, timeout_ns)
        if not ok and strict:
            raise CompletionTimeout(f"{self._cq.count(oper)} of {n} {oper.name} completions after {timeout_ns} ns")
        return ok

    def on_malicious(self, callback: Callable[[int, int, int, float], None]) -> None:
        self._open()
        self._cq.on_malicious = callback

    def close(self) -> None:
        if not self.closed:
            self.closed = True
            self.engine.reactor.call_sync(self.engine.destroy_qp, self.qpn)


def _endpoint_address(engine: Engine) -> tuple:
    addr = getattr(engine.link, "address", None)
    if addr is None:
        return engine.cfg.local_ip, 4791
    return addr[0], addr[1]


def reserve(engine: Engine, size: int, aes_key: Optional[bytes] = None) -> LocalEndpoint:
    """Allocate a QPN, an initial PSN and a registered buffer."""
    if size < 1:
        raise BoundsError("buffer size must be at least 1 byte")

    def run():
        qpn = engine.qps.allocate_qpn()
        psn = engine.qps.random_psn()
        rkey = engine.qps._rng.getrandbits(32)
        vaddr = VADDR_BASE + (qpn << 32)
        ip, port = _endpoint_address(engine)
        desc = OobQpDescriptor(qpn, psn, rkey, vaddr, size, ip, port, aes_key)
        return LocalEndpoint(desc, MemoryRegion(vaddr, size, rkey))

    return engine.reactor.call_sync(run)


def establish(engine: Engine, local: LocalEndpoint, remote: OobQpDescriptor, services=()) -> RdmaHandle:
    """Create the QP from both descriptors.  Our send PSN is the peer's
    expected PSN and vice versa."""
    ld = local.descriptor
    if (ld.aes_key is None) != (remote.aes_key is None) or (ld.aes_key and ld.aes_key != remote.aes_key):
        raise DescriptorMismatch("peers disagree on the AES key")
    conn = QpConnection(
        local_qpn=ld.qpn, remote_qpn=remote.qpn, remote_ip=remote.ip, remote_udp_port=remote.port,
        local_rkey=ld.rkey, remote_rkey=remote.rkey, remote_vaddr=remote.vaddr, remote_size=remote.size,
        aes_key=ld.aes_key,
    )
    engine.reactor.call_sync(engine.create_qp, conn, local.region, ld.psn, remote.psn, tuple(services))
    return RdmaHandle(engine, local, remote)


def connect_local(a: Engine, b: Engine, size: int, services=(), aes_key: Optional[bytes] = None,
                  services_b=None) -> tuple:
    """Set up a QP between two engines without a socket exchange."""
    la, lb = reserve(a, size, aes_key), reserve(b, size, aes_key)
    ha = establish(a, la, lb.descriptor, services)
    hb = establish(b, lb, la.descriptor, services if services_b is None else services_b)
    return ha, hb


def _read_line(sock: socket.socket) -> str:
    buf = b""
    while not buf.endswith(b"\n"):
        chunk = sock.recv(256)
        if not chunk:
            raise DescriptorMismatch("peer closed the exchange before a full line")
        buf += chunk
        if len(buf) > 512:
            raise DescriptorMismatch("descriptor line too long")
    return buf.decode("ascii", errors="replace")


def exchange(sock: socket.socket, local: OobQpDescriptor) -> OobQpDescriptor:
    sock.sendall(local.to_line().encode("ascii"))
    return OobQpDescriptor.from_line(_read_line(sock))


def init_rdma(engine: Engine, max_size: int, oob_port: int, peer: Optional[str] = None,
              timeout: float = 10.0, services=(), aes_key: Optional[bytes] = None,
              bind: str = "127.0.0.1") -> RdmaHandle:
    """Obtain a buffer of ``max_size`` bytes connected to a peer.  With
    ``peer`` set we connect to it; otherwise we listen on ``oob_port``."""
    local = reserve(engine, max_size, aes_key)
    try:
        if peer is None:
            with socket.create_server((bind, oob_port)) as srv:
                srv.settimeout(timeout)
                conn, _ = srv.accept()
        else:
            conn = socket.create_connection((peer, oob_port), timeout=timeout)
        with conn:
            conn.settimeout(timeout)
            remote = exchange(conn, local.descriptor)
    except socket.timeout as exc:
        raise OobTimeout(f"QP exchange on port {oob_port} timed out") from exc
    except ConnectionError as exc:
        raise OobTimeout(f"QP exchange on port {oob_port} failed: {exc}") from exc
    return establish(engine, local, remote, services)


__all__ = [
    "OobQpDescriptor", "SgEntry", "RdmaHandle", "LocalEndpoint", "reserve", "establish", "connect_local",
    "exchange", "init_rdma", "Oper", "CompletionEvent",
]
