"""Reference deep-packet-inspection classifier.

The rule set is deliberately simple and deterministic: a payload is
flagged when it starts with, or embeds, a well-known executable magic
number, or when its byte histogram is dominated by byte values typical of
x86-64 machine code while containing little printable text.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .base import ParallelPathService, Verdict

log = logging.getLogger(__name__)

# 4-byte magics are searched anywhere; 2-byte ones only at offset 0
MAGICS_ANYWHERE = (
    b"\x7fELF",  # ELF
    b"\xfe\xed\xfa\xce", b"\xfe\xed\xfa\xcf",  # Mach-O big endian
    b"\xce\xfa\xed\xfe", b"\xcf\xfa\xed\xfe",  # Mach-O little endian
    b"\xca\xfe\xba\xbe",  # Mach-O fat / Java class
    b"PE\x00\x00",  # PE signature
)
MAGICS_AT_START = (b"MZ",)

_CODE_BYTES = np.zeros(256, dtype=bool)
for _b in (0x0F, 0x24, 0x44, 0x48, 0x4C, 0x74, 0x75, 0x83, 0x85, 0x89, 0x8B, 0xC3, 0xE8, 0xFF):
    _CODE_BYTES[_b] = True
_PRINTABLE = np.zeros(256, dtype=bool)
_PRINTABLE[0x20:0x7F] = True
_PRINTABLE[[0x09, 0x0A, 0x0D]] = True


@dataclass
class DpiRules:
    code_fraction: float = 0.45  # histogram weight of machine-code bytes
    max_printable: float = 0.30
    min_length: int = 64


def classify(payload: bytes, rules: DpiRules = DpiRules()) -> Verdict:
    """Classify one payload chunk.  Pure function of the bytes."""
    data = bytes(payload)
    if not data:
        return Verdict(False, 0.0)
    for m in MAGICS_AT_START + MAGICS_ANYWHERE:
        if data.startswith(m):
            return Verdict(True, 1.0)
    for m in MAGICS_ANYWHERE:
        if m in data:
            return Verdict(True, 0.95)
    if len(data) < rules.min_length:
        return Verdict(False, 0.0)
    arr = np.frombuffer(data, dtype=np.uint8)
    code = float(_CODE_BYTES[arr].mean())
    printable = float(_PRINTABLE[arr].mean())
    score = code * (1.0 - printable)
    flagged = code >= rules.code_fraction and printable <= rules.max_printable
    return Verdict(flagged, round(score, 6))


class DpiInspector(ParallelPathService):
    """Parallel-path inspector.  Classifier failures are reported as clean
    and counted; data is never dropped or altered."""

    name = "dpi"

    def __init__(self, rules: DpiRules | None = None, classifier=None):
        self.rules = rules or DpiRules()
        self.classifier = classifier or (lambda data: classify(data, self.rules))
        self.inspected = 0
        self.flagged = 0
        self.failures = 0

    def inspect(self, payload: bytes) -> Verdict:
        self.inspected += 1
        try:
            v = self.classifier(bytes(payload))
        except Exception as exc:  # classifier bugs must not affect traffic
            self.failures += 1
            log.warning("DPI classifier failed: %s", exc)
            return Verdict(False, 0.0)
        if v.malicious:
            self.flagged += 1
        return v
