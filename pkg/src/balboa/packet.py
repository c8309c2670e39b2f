"""RoCE v2 wire format: IPv4 | UDP(4791) | BTH | [RETH | AETH] | payload+pad | ICRC.

Only the reliable-connection opcodes used by the engine are decoded.  Images
start at the IP header; there is no Ethernet framing.  Length and checksum
fields of IP and UDP are derived on serialisation and are excluded from
packet equality.
"""
from __future__ import annotations

import socket
import struct
from dataclasses import dataclass, field
from enum import IntEnum
from typing import NamedTuple, Optional

from .errors import InvariantViolation, NotRoce, TruncatedPacket, UnknownOpcode
from .icrc import icrc_bytes, icrc_compute

ROCE_PORT = 4791
DEFAULT_MTU = 4096
IP_PROTO_UDP = 17
PSN_MASK = 0xFFFFFF
QPN_MASK = 0xFFFFFF

IP_LEN = 20
UDP_LEN = 8
BTH_LEN = 12
RETH_LEN = 16
AETH_LEN = 4
ICRC_LEN = 4

_IP = struct.Struct("!BBHHHBBH4s4s")
_UDP = struct.Struct("!HHHH")
_BTH = struct.Struct("!BBHII")
_RETH = struct.Struct("!QII")
_AETH = struct.Struct("!I")


class Opcode(IntEnum):
    RDMA_WRITE_FIRST = 0x06
    RDMA_WRITE_MIDDLE = 0x07
    RDMA_WRITE_LAST = 0x08
    RDMA_WRITE_ONLY = 0x0A
    RDMA_READ_REQUEST = 0x0C
    RDMA_READ_RESPONSE_FIRST = 0x0D
    RDMA_READ_RESPONSE_MIDDLE = 0x0E
    RDMA_READ_RESPONSE_LAST = 0x0F
    RDMA_READ_RESPONSE_ONLY = 0x10
    ACKNOWLEDGE = 0x11


class OpcodeInfo(NamedTuple):
    has_reth: bool
    has_aeth: bool
    has_payload: bool
    is_first: bool
    is_last: bool
    is_write: bool
    is_read_response: bool


def _info(reth=False, aeth=False, payload=False, first=False, last=False, write=False, resp=False):
    return OpcodeInfo(reth, aeth, payload, first, last, write, resp)


OPCODE_INFO: dict[Opcode, OpcodeInfo] = {
    Opcode.RDMA_WRITE_FIRST: _info(reth=True, payload=True, first=True, write=True),
    Opcode.RDMA_WRITE_MIDDLE: _info(payload=True, write=True),
    Opcode.RDMA_WRITE_LAST: _info(payload=True, last=True, write=True),
    Opcode.RDMA_WRITE_ONLY: _info(reth=True, payload=True, first=True, last=True, write=True),
    Opcode.RDMA_READ_REQUEST: _info(reth=True, first=True, last=True),
    Opcode.RDMA_READ_RESPONSE_FIRST: _info(aeth=True, payload=True, first=True, resp=True),
    Opcode.RDMA_READ_RESPONSE_MIDDLE: _info(payload=True, resp=True),
    Opcode.RDMA_READ_RESPONSE_LAST: _info(aeth=True, payload=True, last=True, resp=True),
    Opcode.RDMA_READ_RESPONSE_ONLY: _info(aeth=True, payload=True, first=True, last=True, resp=True),
    Opcode.ACKNOWLEDGE: _info(aeth=True, first=True, last=True),
}


def opcode_properties(opcode: int) -> OpcodeInfo:
    try:
        return OPCODE_INFO[Opcode(opcode)]
    except ValueError:
        raise UnknownOpcode(f"opcode 0x{opcode:02x} is not supported") from None


class Syndrome(IntEnum):
    """AETH syndrome values.  ACK carries the 'no credit information' code."""

    ACK = 0x1F
    NAK_SEQUENCE = 0x60
    NAK_INVALID_REQUEST = 0x61
    NAK_REMOTE_ACCESS = 0x62
    NAK_REMOTE_OPERATIONAL = 0x63


def is_ack(syndrome: int) -> bool:
    return (syndrome >> 5) == 0


def is_nak(syndrome: int) -> bool:
    return (syndrome >> 5) == 3


@dataclass
class Ipv4Header:
    src: str = "10.0.0.1"
    dst: str = "10.0.0.2"
    ttl: int = 64
    dscp: int = 0
    ecn: int = 0
    identification: int = 0
    flags_fragment: int = 0x4000  # DF
    total_length: int = field(default=0, compare=False)
    checksum: int = field(default=0, compare=False)


@dataclass
class UdpHeader:
    src_port: int = ROCE_PORT
    dst_port: int = ROCE_PORT
    checksum: int = 0
    length: int = field(default=0, compare=False)


@dataclass
class BthHeader:
    opcode: int
    dest_qpn: int
    psn: int
    solicited: int = 0
    migreq: int = 0
    pad_count: int = 0
    version: int = 0
    pkey: int = 0xFFFF
    reserved8a: int = 0
    ack_request: int = 0
    reserved7: int = 0


@dataclass
class RethHeader:
    virtual_address: int
    rkey: int
    dma_length: int


@dataclass
class AethHeader:
    syndrome: int
    msn: int


@dataclass
class RocePacket:
    ip: Ipv4Header
    udp: UdpHeader
    bth: BthHeader
    reth: Optional[RethHeader] = None
    aeth: Optional[AethHeader] = None
    payload: bytes = b""  # includes pad bytes
    icrc: Optional[int] = None  # None: computed by serialize_packet

    @property
    def opcode(self) -> int:
        return self.bth.opcode

    @property
    def logical_payload(self) -> bytes:
        if self.bth.pad_count:
            return self.payload[: len(self.payload) - self.bth.pad_count]
        return self.payload


def source_port(qpn: int) -> int:
    """UDP source port as a function of the sender's QPN (flow entropy)."""
    return ROCE_PORT ^ (qpn & 0xFFFF)


def pad_for(length: int) -> int:
    return (-length) & 3


def ip_checksum(header) -> int:
    s = sum(struct.unpack("!10H", header))
    while s >> 16:
        s = (s & 0xFFFF) + (s >> 16)
    return (~s) & 0xFFFF


def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise InvariantViolation(msg)


def validate(p: RocePacket, mtu: int = DEFAULT_MTU) -> None:
    info = opcode_properties(p.bth.opcode)
    _check(info.has_reth == (p.reth is not None), f"RETH presence wrong for opcode 0x{p.bth.opcode:02x}")
    _check(info.has_aeth == (p.aeth is not None), f"AETH presence wrong for opcode 0x{p.bth.opcode:02x}")
    _check(p.reth is None or p.aeth is None, "RETH and AETH are exclusive")
    _check(len(p.payload) % 4 == 0, "payload plus pad must be a multiple of 4")
    _check(0 <= p.bth.pad_count <= 3, "pad count out of range")
    _check(p.bth.pad_count <= len(p.payload), "pad longer than payload")
    _check(len(p.payload) <= mtu, f"payload {len(p.payload)} exceeds MTU {mtu}")
    _check(info.has_payload or not p.payload, "opcode carries no payload")
    _check(0 <= p.bth.psn <= PSN_MASK and 0 <= p.bth.dest_qpn <= QPN_MASK, "24-bit field overflow")


def serialize_packet(p: RocePacket) -> bytes:
    """Produce the wire image.  IP total length, UDP length and the IP
    header checksum are recomputed; the ICRC is computed when absent."""
    validate(p, mtu=max(DEFAULT_MTU, len(p.payload)))
    b = p.bth
    parts = [
        _BTH.pack(
            b.opcode,
            (b.solicited & 1) << 7 | (b.migreq & 1) << 6 | (b.pad_count & 3) << 4 | (b.version & 0xF),
            b.pkey,
            (b.reserved8a & 0xFF) << 24 | b.dest_qpn,
            (b.ack_request & 1) << 31 | (b.reserved7 & 0x7F) << 24 | b.psn,
        )
    ]
    if p.reth is not None:
        parts.append(_RETH.pack(p.reth.virtual_address, p.reth.rkey, p.reth.dma_length))
    if p.aeth is not None:
        parts.append(_AETH.pack((p.aeth.syndrome & 0xFF) << 24 | (p.aeth.msn & 0xFFFFFF)))
    parts.append(bytes(p.payload))
    body = b"".join(parts)
    udp_len = UDP_LEN + len(body) + ICRC_LEN
    total = IP_LEN + udp_len
    ip = p.ip
    hdr = bytearray(
        _IP.pack(
            0x45, (ip.dscp & 0x3F) << 2 | (ip.ecn & 3), total, ip.identification,
            ip.flags_fragment, ip.ttl, IP_PROTO_UDP, 0,
            socket.inet_aton(ip.src), socket.inet_aton(ip.dst),
        )
    )
    struct.pack_into("!H", hdr, 10, ip_checksum(hdr))
    image = bytes(hdr) + _UDP.pack(p.udp.src_port, p.udp.dst_port, udp_len, p.udp.checksum) + body
    crc = p.icrc if p.icrc is not None else icrc_compute(image)
    return image + icrc_bytes(crc)


def parse_packet(raw, mtu: int = DEFAULT_MTU) -> RocePacket:
    """Decode a wire image.  Raises TruncatedPacket, NotRoce, UnknownOpcode
    or InvariantViolation."""
    raw = bytes(raw)
    if len(raw) < IP_LEN + UDP_LEN + BTH_LEN + ICRC_LEN:
        raise TruncatedPacket(f"{len(raw)} bytes is below the minimum RoCE image")
    (ver_ihl, tos, total, ident, flags, ttl, proto, csum, src, dst) = _IP.unpack_from(raw, 0)
    if ver_ihl >> 4 != 4:
        raise NotRoce("not IPv4")
    if ver_ihl & 0xF != 5:
        raise InvariantViolation("IP options are not supported")
    if proto != IP_PROTO_UDP:
        raise NotRoce("not UDP")
    if total > len(raw):
        raise TruncatedPacket(f"IP total length {total} exceeds {len(raw)} captured bytes")
    sport, dport, ulen, ucsum = _UDP.unpack_from(raw, IP_LEN)
    if dport != ROCE_PORT:
        raise NotRoce(f"UDP destination port {dport}")
    if ulen != total - IP_LEN:
        raise TruncatedPacket(f"UDP length {ulen} inconsistent with IP length {total}")
    end = total - ICRC_LEN
    off = IP_LEN + UDP_LEN
    if end < off + BTH_LEN:
        raise TruncatedPacket("no room for BTH")
    opcode, fl, pkey, w1, w2 = _BTH.unpack_from(raw, off)
    info = opcode_properties(opcode)
    bth = BthHeader(
        opcode=opcode, dest_qpn=w1 & QPN_MASK, psn=w2 & PSN_MASK,
        solicited=fl >> 7, migreq=(fl >> 6) & 1, pad_count=(fl >> 4) & 3, version=fl & 0xF,
        pkey=pkey, reserved8a=w1 >> 24, ack_request=w2 >> 31, reserved7=(w2 >> 24) & 0x7F,
    )
    off += BTH_LEN
    reth = aeth = None
    if info.has_reth:
        if end < off + RETH_LEN:
            raise TruncatedPacket("no room for RETH")
        reth = RethHeader(*_RETH.unpack_from(raw, off))
        off += RETH_LEN
    if info.has_aeth:
        if end < off + AETH_LEN:
            raise TruncatedPacket("no room for AETH")
        (w,) = _AETH.unpack_from(raw, off)
        aeth = AethHeader(w >> 24, w & 0xFFFFFF)
        off += AETH_LEN
    p = RocePacket(
        ip=Ipv4Header(
            src=socket.inet_ntoa(src), dst=socket.inet_ntoa(dst), ttl=ttl, dscp=tos >> 2, ecn=tos & 3,
            identification=ident, flags_fragment=flags, total_length=total, checksum=csum,
        ),
        udp=UdpHeader(src_port=sport, dst_port=dport, checksum=ucsum, length=ulen),
        bth=bth, reth=reth, aeth=aeth,
        payload=raw[off:end],
        icrc=int.from_bytes(raw[end:total], "little"),
    )
    validate(p, mtu)
    return p


def header_length(opcode: int) -> int:
    """Bytes in front of the payload for an opcode (IP through RETH/AETH)."""
    info = opcode_properties(opcode)
    return IP_LEN + UDP_LEN + BTH_LEN + (RETH_LEN if info.has_reth else 0) + (AETH_LEN if info.has_aeth else 0)


def peek_header_length(raw) -> int:
    """Header length of a raw image, or the whole image if it is not RoCE."""
    try:
        return header_length(raw[IP_LEN + UDP_LEN])
    except (UnknownOpcode, IndexError):
        return len(raw)


def is_roce_image(raw) -> bool:
    return (
        len(raw) >= IP_LEN + UDP_LEN
        and raw[0] >> 4 == 4
        and raw[9] == IP_PROTO_UDP
        and int.from_bytes(raw[22:24], "big") == ROCE_PORT
    )


def make_packet(
    opcode: int,
    dest_qpn: int,
    psn: int,
    payload: bytes = b"",
    *,
    src_qpn: int = 0,
    src_ip: str = "10.0.0.1",
    dst_ip: str = "10.0.0.2",
    reth: Optional[RethHeader] = None,
    aeth: Optional[AethHeader] = None,
    ack_request: bool = False,
) -> RocePacket:
    """Convenience constructor that pads the logical payload."""
    pad = pad_for(len(payload))
    return RocePacket(
        ip=Ipv4Header(src=src_ip, dst=dst_ip),
        udp=UdpHeader(src_port=source_port(src_qpn)),
        bth=BthHeader(opcode=opcode, dest_qpn=dest_qpn, psn=psn, pad_count=pad, ack_request=int(ack_request)),
        reth=reth,
        aeth=aeth,
        payload=bytes(payload) + b"\x00" * pad,
    )
