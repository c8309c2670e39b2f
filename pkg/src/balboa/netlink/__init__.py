"""Link layer: deterministic simulator, UDP overlay and PCAP tap."""
from .pcap import PcapReader, PcapWriter, ProtocolFilter, Sniffer, SnifferConfig, TapDirection, read_pcap
from .sim import PROFILES, LinkConfig, SimEndpoint, SimLink, Simulation, link_profile
from .udp import UdpLink

__all__ = [
    "PcapReader", "PcapWriter", "ProtocolFilter", "Sniffer", "SnifferConfig", "TapDirection", "read_pcap",
    "PROFILES", "LinkConfig", "SimEndpoint", "SimLink", "Simulation", "link_profile", "UdpLink",
]
