"""Pluggable services: on-path transforms, parallel inspectors, routing."""
from .aes import Aes128, AesService, aes_decrypt, aes_encrypt
from .base import (
    Direction, OnPathService, ParallelPathService, QpServices, ServiceRegistry, Stream, Verdict, run_chain,
)
from .delivery import DeliveryStats, MemoryRegion, Route, RouteMode, ScatterSegment, route_delivery
from .dlrm import DlrmService, preprocess_records
from .dpi import DpiInspector, classify


def default_registry() -> ServiceRegistry:
    reg = ServiceRegistry()
    reg.add("aes", lambda: AesService(Direction.BOTH))
    reg.add("aes_encrypt", lambda: AesService(Direction.TX))
    reg.add("aes_decrypt", lambda: AesService(Direction.RX))
    reg.add("dlrm_preproc", DlrmService)
    reg.add("dpi", DpiInspector)
    return reg


__all__ = [
    "Aes128", "AesService", "aes_decrypt", "aes_encrypt", "Direction", "OnPathService",
    "ParallelPathService", "QpServices", "ServiceRegistry", "Stream", "Verdict", "run_chain",
    "DeliveryStats", "MemoryRegion", "Route", "RouteMode", "ScatterSegment", "route_delivery",
    "DlrmService", "preprocess_records", "DpiInspector", "classify", "default_registry",
]
