"""Random valid packets, for hypothesis and for seeded bulk loops."""
from __future__ import annotations

import random

from hypothesis import strategies as st

from balboa.packet import (
    OPCODE_INFO, AethHeader, BthHeader, Ipv4Header, Opcode, RethHeader, RocePacket, UdpHeader, pad_for,
)

OPCODES = list(Opcode)


def random_packet(rng: random.Random, max_payload: int = 4096) -> RocePacket:
    op = rng.choice(OPCODES)
    info = OPCODE_INFO[op]
    n = rng.randint(0, max_payload) if info.has_payload else 0
    pad = pad_for(n)
    if n + pad > max_payload:
        n -= 4 - pad if n >= 4 else n
        pad = pad_for(n)
    body = rng.randbytes(n) + b"\x00" * pad
    return RocePacket(
        ip=Ipv4Header(
            src=".".join(str(rng.randint(1, 254)) for _ in range(4)),
            dst=".".join(str(rng.randint(1, 254)) for _ in range(4)),
            ttl=rng.randint(1, 255), dscp=rng.randint(0, 63), ecn=rng.randint(0, 3),
            identification=rng.getrandbits(16),
        ),
        udp=UdpHeader(src_port=rng.getrandbits(16), checksum=rng.getrandbits(16)),
        bth=BthHeader(
            opcode=op, dest_qpn=rng.getrandbits(24), psn=rng.getrandbits(24), solicited=rng.getrandbits(1),
            migreq=rng.getrandbits(1), pad_count=pad, version=rng.getrandbits(4), pkey=rng.getrandbits(16),
            reserved8a=rng.getrandbits(8), ack_request=rng.getrandbits(1), reserved7=rng.getrandbits(7),
        ),
        reth=RethHeader(rng.getrandbits(64), rng.getrandbits(32), rng.randint(1, 1 << 31)) if info.has_reth else None,
        aeth=AethHeader(rng.getrandbits(8), rng.getrandbits(24)) if info.has_aeth else None,
        payload=body,
    )


@st.composite
def packets(draw, max_payload: int = 512):
    seed = draw(st.integers(0, 2**64 - 1))
    return random_packet(random.Random(seed), max_payload)
