from __future__ import annotations

import csv
import io
import json
import socket
import subprocess
import sys
import time

import pytest

from balboa import bench
from balboa.bench import CSV_HEADER, BenchSpec, csv_text, parse_sizes, share_window
from balboa.cli import main


def test_parse_sizes():
    assert parse_sizes("64,4K,1M") == [64, 4096, 1 << 20]
    assert parse_sizes("64-512") == [64, 128, 256, 512]
    assert parse_sizes("4KiB") == [4096]
    with pytest.raises(ValueError):
        parse_sizes("lots")


def test_spec_validation():
    with pytest.raises(ValueError):
        BenchSpec("warp")
    with pytest.raises(ValueError):
        BenchSpec("latency", reps=0)
    with pytest.raises(ValueError):
        BenchSpec("latency", sizes=[bench.MAX_REGION + 1])
    assert BenchSpec("multiqp").op == "read"
    spec = BenchSpec("dpi_overhead", link="udp:127.0.0.1")
    with pytest.raises(ValueError):
        bench.run(spec)


def test_share_window():
    shares, end = share_window({0: [1, 2, 3], 1: [2, 4, 6]}, 10)
    assert end == 3 and shares == {0: 30, 1: 10}


def test_csv_header_and_determinism():
    spec = dict(sizes=[64, 4096], reps=3, batch=4)
    a = bench.run(BenchSpec("throughput", **spec))
    b = bench.run(BenchSpec("throughput", **spec))
    text = csv_text(a)
    assert text == csv_text(b)
    rows = list(csv.reader(io.StringIO(text)))
    assert rows[0] == CSV_HEADER
    assert [int(r[-1]) for r in rows[1:]] == [64 * 12, 4096 * 12]
    assert a.passed


def test_latency_mode_shape():
    res = bench.run(BenchSpec("latency", sizes=[64, 1024, 8192], reps=3, breakdown=True))
    assert res.passed, res.checks
    assert {r.metric for r in res.rows} >= {"half_rtt", "one_way", "stage_rx_dma", "stage_wire"}
    m = [r.mean for r in res.find("half_rtt")]
    assert m == sorted(m)


@pytest.mark.parametrize("mode, sizes", [("aes_compare", [4096]), ("dpi_overhead", [4096]),
                                         ("preproc_paths", [15600])])
def test_service_modes_pass(mode, sizes):
    res = bench.run(BenchSpec(mode, sizes=sizes, reps=2, batch=4))
    assert res.passed, [c for c in res.checks if not c[1]]


def test_cli_info(capsys):
    assert main(["info"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert "lossy" in out["profiles"] and out["engine_defaults"]["max_outstanding"] == 128


def test_cli_bench_exit_codes(tmp_path, capsys):
    path = tmp_path / "t.csv"
    assert main(["bench", "latency", "--sizes", "64,256", "--reps", "2", "--csv", str(path)]) == 0
    assert path.read_text().splitlines()[0] == ",".join(CSV_HEADER)
    err = capsys.readouterr().err
    assert "PASS latency non-decreasing in size" in err
    assert main(["bench", "latency", "--sizes", "huge"]) == 2
    assert main(["bench", "dpi_overhead", "--link", "udp:127.0.0.1", "--sizes", "64"]) == 2
    assert main(["bench", "latency", "--role", "client"]) == 2


def test_cli_capture_bad_path():
    assert main(["capture", "/nonexistent/dir/x.pcap"]) == 1


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "balboa", "info"], capture_output=True, text=True, timeout=60)
    assert out.returncode == 0 and "bench_modes" in out.stdout


def _free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def test_udp_server_client_processes():
    port = _free_port()
    server = subprocess.Popen([sys.executable, "-m", "balboa", "bench", "latency", "--role", "server",
                               "--link", "udp:127.0.0.1", "--oob-port", str(port), "--sizes", "64,1024",
                               "--duration", "20"], stderr=subprocess.PIPE, text=True)
    try:
        time.sleep(1.0)
        client = subprocess.run([sys.executable, "-m", "balboa", "bench", "latency", "--role", "client",
                                 "--link", "udp:127.0.0.1", "--peer", f"127.0.0.1:{port}", "--sizes", "64,1024",
                                 "--reps", "5"], capture_output=True, text=True, timeout=60)
        assert client.returncode == 0, client.stderr
        rows = list(csv.reader(io.StringIO(client.stdout)))
        assert rows[0] == CSV_HEADER and len(rows) == 3
    finally:
        server.terminate()
        server.wait(10)
