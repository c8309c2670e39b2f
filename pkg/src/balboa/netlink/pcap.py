"""Classic PCAP capture files (raw IP link type) and the traffic sniffer tap."""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from enum import Enum
from typing import BinaryIO, Iterator, NamedTuple, Optional, Union

from ..packet import is_roce_image, peek_header_length

PCAP_MAGIC = 0xA1B2C3D4
VERSION = (2, 4)
LINKTYPE_RAW = 101
SNAPLEN = 65535
GLOBAL_HEADER = struct.Struct("<IHHiIII")
RECORD_HEADER = struct.Struct("<IIII")

log = logging.getLogger(__name__)


class PcapRecord(NamedTuple):
    ts_sec: int
    ts_usec: int
    incl_len: int
    orig_len: int
    data: bytes

    @property
    def timestamp_ns(self) -> int:
        return self.ts_sec * 1_000_000_000 + self.ts_usec * 1000


class PcapWriter:
    def __init__(self, target: Union[str, BinaryIO], snaplen: int = SNAPLEN):
        self._own = isinstance(target, str)
        self.f = open(target, "wb") if self._own else target
        self.snaplen = snaplen
        self.records = 0
        self.f.write(GLOBAL_HEADER.pack(PCAP_MAGIC, *VERSION, 0, 0, snaplen, LINKTYPE_RAW))

    def write(self, ts_ns: int, data: bytes, orig_len: Optional[int] = None) -> None:
        data = bytes(data[:self.snaplen])
        sec, rem = divmod(int(ts_ns), 1_000_000_000)
        self.f.write(RECORD_HEADER.pack(sec, rem // 1000, len(data), orig_len if orig_len is not None else len(data)))
        self.f.write(data)
        self.records += 1

    def flush(self) -> None:
        self.f.flush()

    def close(self) -> None:
        self.f.flush()
        if self._own:
            self.f.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_pcap(source: Union[str, bytes, BinaryIO]) -> tuple:
    """Parse a capture.  Returns (link_type, snaplen, [PcapRecord])."""
    if isinstance(source, str):
        with open(source, "rb") as f:
            raw = f.read()
    elif isinstance(source, (bytes, bytearray)):
        raw = bytes(source)
    else:
        raw = source.read()
    if len(raw) < GLOBAL_HEADER.size:
        raise ValueError("truncated PCAP global header")
    magic, vmaj, vmin, _, _, snaplen, link = GLOBAL_HEADER.unpack_from(raw)
    if magic != PCAP_MAGIC or (vmaj, vmin) != VERSION:
        raise ValueError(f"unsupported PCAP header magic=0x{magic:08x} version={vmaj}.{vmin}")
    off = GLOBAL_HEADER.size
    out = []
    while off < len(raw):
        if off + RECORD_HEADER.size > len(raw):
            raise ValueError("truncated PCAP record header")
        sec, usec, incl, orig = RECORD_HEADER.unpack_from(raw, off)
        off += RECORD_HEADER.size
        if off + incl > len(raw):
            raise ValueError("truncated PCAP record data")
        out.append(PcapRecord(sec, usec, incl, orig, raw[off:off + incl]))
        off += incl
    return link, snaplen, out


class PcapReader:
    """Iterates the records of a capture."""

    def __init__(self, source):
        self.link_type, self.snaplen, self.records = read_pcap(source)

    def __iter__(self) -> Iterator[PcapRecord]:
        return iter(self.records)

    def __len__(self) -> int:
        return len(self.records)


class TapDirection(str, Enum):
    RX = "rx"
    TX = "tx"
    BOTH = "both"


class ProtocolFilter(str, Enum):
    ALL = "all"
    ROCE_ONLY = "roce_only"


@dataclass
class SnifferConfig:
    direction: TapDirection = TapDirection.BOTH
    protocol_filter: ProtocolFilter = ProtocolFilter.ALL
    omit_payload: bool = False
    output_path: Optional[str] = None


def _header_bytes(image: bytes) -> int:
    if is_roce_image(image):
        return min(len(image), peek_header_length(image))
    return min(len(image), 28)  # IP + UDP


class Sniffer:
    """Copies traversing packets into a capture file.  The tap only reads
    the images it is given; a write failure disables capture and leaves the
    traffic untouched."""

    def __init__(self, cfg: SnifferConfig, target: Union[str, BinaryIO, None] = None):
        self.cfg = cfg
        self.captured = 0
        self.filtered = 0
        self.error: Optional[str] = None
        self.writer: Optional[PcapWriter] = None
        try:
            self.writer = PcapWriter(target if target is not None else cfg.output_path)
        except (OSError, TypeError) as exc:
            self._disable(exc)

    @property
    def enabled(self) -> bool:
        return self.writer is not None

    def _disable(self, exc: Exception) -> None:
        self.error = str(exc)
        self.writer = None
        log.error("sniffer disabled: %s", exc)

    def tap(self, image: bytes, direction: TapDirection, ts_ns: int) -> None:
        if self.writer is None:
            return
        want = self.cfg.direction
        if want != TapDirection.BOTH and TapDirection(direction) != want:
            return
        if self.cfg.protocol_filter == ProtocolFilter.ROCE_ONLY and not is_roce_image(image):
            self.filtered += 1
            return
        data = image[:_header_bytes(image)] if self.cfg.omit_payload else image
        try:
            self.writer.write(ts_ns, data, len(image))
        except (OSError, ValueError) as exc:
            self._disable(exc)
            return
        self.captured += 1

    def close(self) -> None:
        if self.writer is not None:
            try:
                self.writer.close()
            except OSError as exc:
                self._disable(exc)
