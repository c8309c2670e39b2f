"""UDP overlay transport: one datagram per serialized IP/UDP/RoCE image."""
from __future__ import annotations

import os
import socket
from typing import Optional

from ..errors import EndpointClosed, Oversized
from .sim import MAX_HEADER

BIND_ENV = "BALBOA_BIND"


def _parse_addr(text: str) -> tuple:
    host, _, port = text.rpartition(":")
    return (host or "127.0.0.1", int(port))


def default_bind() -> tuple:
    """Bind address from the environment override, else loopback."""
    env = os.environ.get(BIND_ENV)
    return _parse_addr(env) if env else ("127.0.0.1", 0)


class UdpLink:
    def __init__(self, bind: Optional[tuple] = None, peer: Optional[tuple] = None, mtu: int = 4096):
        self.mtu = mtu
        self.peer = peer
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self.sock.setsockopt(socket.SOL_SOCKET, socket.SO_RCVBUF, 8 << 20)
        self.sock.bind(bind or default_bind())
        self.sock.setblocking(False)
        self.closed = False
        self.sent = 0
        self.received = 0

    @property
    def address(self) -> tuple:
        return self.sock.getsockname()

    def fileno(self) -> int:
        return self.sock.fileno()

    def send(self, image: bytes, dest: Optional[tuple] = None, not_before: int = 0) -> None:
        if self.closed:
            raise EndpointClosed("UDP link is closed")
        if len(image) > self.mtu + MAX_HEADER:
            raise Oversized(f"{len(image)}-byte image exceeds MTU {self.mtu} plus headers")
        target = dest or self.peer
        if target is None:
            raise EndpointClosed("UDP link has no peer address")
        try:
            self.sock.sendto(image, target)
        except BlockingIOError:
            return  # kernel buffer full: treated as loss, recovered by retransmission
        self.sent += 1

    def recv(self) -> Optional[bytes]:
        if self.closed:
            raise EndpointClosed("UDP link is closed")
        try:
            data, _ = self.sock.recvfrom(65535)
        except (BlockingIOError, InterruptedError):
            return None
        self.received += 1
        return data

    def tx_free_at(self) -> int:
        return 0

    def close(self) -> None:
        if not self.closed:
            self.closed = True
            self.sock.close()
