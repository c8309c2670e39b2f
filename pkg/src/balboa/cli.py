"""Command line: ``balboa bench``, ``balboa capture`` and ``balboa info``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from typing import Optional

from . import bench
from .api import SgEntry, connect_local
from .engine import Engine, EngineConfig, load_config
from .errors import BalboaError
from .netlink.pcap import ProtocolFilter, Sniffer, SnifferConfig, TapDirection
from .netlink.sim import PROFILES, SimLink, Simulation, link_profile
from .rx import Oper


def _bench_spec(args) -> bench.BenchSpec:
    engine_cfg, link_cfg = EngineConfig(), None
    if args.config:
        fc = load_config(args.config)
        engine_cfg, link_cfg = fc.engine, fc.link
        if args.link and not args.link.startswith("udp:"):
            link_cfg = None  # an explicit profile wins over the file
    peer = None
    if args.role == "client":
        if not args.peer:
            raise ValueError("--role client needs --peer host:port")
        peer = args.peer
    sizes = bench.parse_sizes(args.sizes) if args.sizes else list(bench.DEFAULT_SIZES)
    spec = bench.BenchSpec(
        mode=args.mode, sizes=sizes, batch=args.batch, reps=args.reps, qps=args.qps, link=args.link,
        seed=args.seed, op=args.op, breakdown=args.breakdown, engine=engine_cfg,
        link_config=link_cfg if not (args.link or "").startswith("udp:") else None, peer=peer,
    )
    if peer is not None and not spec.udp:
        raise ValueError("--role client needs --link udp:<local address>")
    return spec


def cmd_bench(args) -> int:
    if args.role == "server":
        host = args.link.split(":", 1)[1] if args.link and args.link.startswith("udp:") else "127.0.0.1"
        sizes = bench.parse_sizes(args.sizes) if args.sizes else list(bench.DEFAULT_SIZES)
        region = max(sizes) * (args.batch if args.mode in ("throughput", "multiqp") else 1)
        print(f"serving {region}-byte buffers on {host}, QP exchange port {args.oob_port}", file=sys.stderr)
        bench.serve(host, args.oob_port, region, duration=args.duration)
        return 0
    spec = _bench_spec(args)
    result = bench.run(spec)
    if args.csv:
        with open(args.csv, "w", newline="") as f:
            bench.write_csv(result, f)
    else:
        sys.stdout.write(bench.csv_text(result))
    for name, ok, detail in result.checks:
        print(f"{'PASS' if ok else 'FAIL'} {name}" + (f" ({detail})" if detail else ""), file=sys.stderr)
    return 0 if result.passed else 1


def cmd_capture(args) -> int:
    """Run a few WRITEs and READs between two simulated engines and record
    the traffic seen by the first one."""
    sim = Simulation()
    link = SimLink(sim, link_profile(args.link).with_(seed=args.seed))
    a = Engine(EngineConfig(local_ip="10.0.0.1", seed=args.seed), link.a, sim, "a")
    b = Engine(EngineConfig(local_ip="10.0.0.2", seed=args.seed + 1), link.b, sim, "b")
    cfg = SnifferConfig(TapDirection(args.direction), ProtocolFilter(args.filter), args.omit_payload, args.output)
    sniffer = Sniffer(cfg)
    if not sniffer.enabled:
        print(f"cannot open {args.output}: {sniffer.error}", file=sys.stderr)
        return 1
    a.attach_sniffer(sniffer)
    region = max(1 << 16, args.size)
    ha, hb = connect_local(a, b, region)
    ha.buffer[:] = bytes(i & 0xFF for i in range(region))
    for i in range(args.writes):
        ha.invoke(Oper.REMOTE_RDMA_WRITE, SgEntry(args.size, 0, i * args.size % (region - args.size + 1)))
    for i in range(args.reads):
        ha.invoke(Oper.REMOTE_RDMA_READ, SgEntry(args.size, 0, 0))
    sim.run_until(lambda: ha.check_completed(Oper.REMOTE_RDMA_WRITE) >= args.writes
                  and ha.check_completed(Oper.REMOTE_RDMA_READ) >= args.reads, 10**12)
    sim.run_until(lambda: a.idle() and b.idle(), 10**12)
    sniffer.close()
    print(f"wrote {sniffer.captured} packets to {args.output}", file=sys.stderr)
    return 0


def cmd_info(args) -> int:
    out = {
        "profiles": {k: asdict(v) for k, v in PROFILES.items()},
        "engine_defaults": EngineConfig().to_dict(),
        "bench_modes": list(bench.MODES),
    }
    print(json.dumps(out, indent=2, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="balboa", description="Userspace RoCE v2 engine: benchmarks and tools")
    p.add_argument("-v", "--verbose", action="store_true", help="log engine warnings and errors")
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("bench", help="run a benchmark mode and emit CSV")
    b.add_argument("mode", choices=bench.MODES)
    b.add_argument("--sizes", help="comma list or power-of-two range, e.g. 64-1M or 4K,32K")
    b.add_argument("--batch", type=int, default=64)
    b.add_argument("--reps", type=int, default=100)
    b.add_argument("--qps", type=int, default=1)
    b.add_argument("--link", help=f"simulator profile ({', '.join(PROFILES)}) or udp:<address>")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--csv", help="write CSV here instead of stdout")
    b.add_argument("--config", help="JSON file with engine and link sections")
    b.add_argument("--op", choices=("write", "read"))
    b.add_argument("--breakdown", action="store_true", help="latency mode: per-stage rows")
    b.add_argument("--role", choices=("both", "server", "client"), default="both",
                   help="UDP only: run one endpoint per invocation")
    b.add_argument("--peer", help="client role: server host:oob_port")
    b.add_argument("--oob-port", type=int, default=18515, help="server role: QP exchange port")
    b.add_argument("--duration", type=float, help="server role: seconds to serve (default forever)")
    b.set_defaults(func=cmd_bench)

    c = sub.add_parser("capture", help="write a PCAP of simulated traffic")
    c.add_argument("output")
    c.add_argument("--writes", type=int, default=4)
    c.add_argument("--reads", type=int, default=1)
    c.add_argument("--size", type=int, default=1024)
    c.add_argument("--link", default="lossless", choices=tuple(PROFILES))
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--direction", default="both", choices=[d.value for d in TapDirection])
    c.add_argument("--filter", default="all", choices=[f.value for f in ProtocolFilter])
    c.add_argument("--omit-payload", action="store_true")
    c.set_defaults(func=cmd_capture)

    i = sub.add_parser("info", help="print link profiles and engine defaults as JSON")
    i.set_defaults(func=cmd_info)
    return p


def main(argv: Optional[list] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.verbose else logging.CRITICAL, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except (BalboaError, ValueError, OSError) as exc:
        print(f"balboa: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
