from __future__ import annotations

import os
import sys
from dataclasses import replace

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

from balboa.api import connect_local  # noqa: E402
from balboa.engine import Engine, EngineConfig  # noqa: E402
from balboa.netlink.sim import LinkConfig, SimLink, Simulation  # noqa: E402

settings.register_profile("balboa", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("balboa")

DATA = os.path.join(os.path.dirname(__file__), "data")


class Pair:
    """Two engines joined by one simulated link."""

    def __init__(self, link: LinkConfig | None = None, cfg: EngineConfig | None = None, size: int = 1 << 16,
                 qps: int = 1, services=(), services_b=None, aes_key=None, seed: int = 0, trace: bool = True):
        cfg = cfg or EngineConfig()
        self.sim = Simulation()
        self.link = SimLink(self.sim, link or LinkConfig())
        self.a = Engine(replace(cfg, local_ip="10.0.0.1", seed=seed, trace=trace), self.link.a, self.sim, "a")
        self.b = Engine(replace(cfg, local_ip="10.0.0.2", seed=seed + 1, trace=trace), self.link.b, self.sim, "b")
        self.handles = [connect_local(self.a, self.b, size, services, aes_key, services_b) for _ in range(qps)]
        self.ha, self.hb = self.handles[0]

    def run(self, pred=None, limit_ns: int = 60 * 10**9) -> bool:
        if pred is None:
            return self.sim.run_until(lambda: self.a.idle() and self.b.idle(), limit_ns)
        return self.sim.run_until(pred, limit_ns)


@pytest.fixture
def pair_factory():
    return Pair


@pytest.fixture
def pair():
    return Pair()
