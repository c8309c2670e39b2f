"""Userspace RoCE v2 RDMA engine with pluggable on-path services."""
from .api import OobQpDescriptor, RdmaHandle, SgEntry, connect_local, establish, init_rdma, reserve
from .engine import Engine, EngineConfig, PipelineModel, load_config
from .errors import BalboaError
from .netlink import LinkConfig, SimLink, Simulation, UdpLink, link_profile
from .rx import CompletionEvent, Oper, Status

__version__ = "0.1.0"

__all__ = [
    "OobQpDescriptor", "RdmaHandle", "SgEntry", "connect_local", "establish", "init_rdma", "reserve",
    "Engine", "EngineConfig", "PipelineModel", "load_config", "BalboaError",
    "LinkConfig", "SimLink", "Simulation", "UdpLink", "link_profile",
    "CompletionEvent", "Oper", "Status", "__version__",
]
