from __future__ import annotations

import threading
import time

import pytest

from wibench.cli import load_config_file, parse_hostport, parse_rate, parse_size, run_cli
from wibench.model import read_journal
from wibench.transfer import BlobServer, blob_payload

FAST = ["--file-size", "20KiB", "--rate", "64KiB", "--interval-ms", "50", "--fast", "-q"]


@pytest.mark.parametrize(
    "text,expected",
    [("655KiB", 670720), ("655MiB", 686817280), ("1GiB", 1 << 30), ("12", 12), ("7 B", 7), ("3kib", 3072)],
)
def test_parse_size(text, expected):
    assert parse_size(text) == expected


@pytest.mark.parametrize("text", ["", "12MB", "-5", "1.5MiB", "KiB"])
def test_parse_size_rejects(text):
    with pytest.raises(ValueError):
        parse_size(text)


def test_parse_rate_and_hostport():
    assert parse_rate("unlimited") is None
    assert parse_rate("131KiB") == 134144
    assert parse_hostport("10.0.0.2", 5555) == ("10.0.0.2", 5555)
    assert parse_hostport("10.0.0.2:21", 5555) == ("10.0.0.2", 21)


def test_config_file(tmp_path):
    p = tmp_path / "c.conf"
    p.write_text("# comment\ninterval_ms = 1000\n\nrun_id=lab\n")
    assert load_config_file(p) == {"interval_ms": "1000", "run_id": "lab"}
    p.write_text("no equals sign\n")
    with pytest.raises(ValueError):
        load_config_file(p)


def test_help_exits_zero(capsys):
    assert run_cli(["--help"], env={}) == 0
    for cmd in ("serve", "measure", "simulate", "analyze", "report"):
        assert run_cli([cmd, "--help"], env={}) == 0
    assert "simulate" in capsys.readouterr().out


def test_unknown_flag_is_usage_error(tmp_path, capsys):
    out = tmp_path / "out"
    assert run_cli(["simulate", "--out", str(out), "--bogus"], env={}) == 1
    assert "usage:" in capsys.readouterr().err
    assert not out.exists()


def test_bad_value_is_usage_error(tmp_path):
    out = tmp_path / "out"
    assert run_cli(["simulate", "--out", str(out), "--interval-ms", "5"], env={}) == 1
    assert run_cli(["simulate", "--out", str(out), "--file-size", "lots"], env={}) == 1
    assert not out.exists()


def test_missing_command():
    assert run_cli([], env={}) == 1


def test_simulate_then_analyze(tmp_path, capsys):
    out = tmp_path / "out"
    assert run_cli(["simulate", "--out", str(out), "--seed", "3", *FAST], env={}) == 0
    names = sorted(p.name for p in out.iterdir())
    assert names == ["sim-s3-report.txt", "sim-s3-t1-client.csv", "sim-s3-t1-server.csv"]
    report = tmp_path / "again.txt"
    rc = run_cli(
        ["analyze", "--server", str(out / "sim-s3-t1-server.csv"), "--client", str(out / "sim-s3-t1-client.csv"), "-o", str(report)],
        env={},
    )
    assert rc == 0
    assert report.read_text() == (out / "sim-s3-report.txt").read_text()


def test_analyze_interval_mismatch(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run_cli(["simulate", "--out", str(a), "--run-id", "x", *FAST], env={}) == 0
    assert run_cli(["simulate", "--out", str(b), "--run-id", "x", *FAST[:4], "--interval-ms", "100", "--fast", "-q"], env={}) == 0
    rc = run_cli(["analyze", "--server", str(a / "x-t1-server.csv"), "--client", str(b / "x-t1-client.csv")], env={})
    assert rc == 2
    assert "IntervalMismatch" in capsys.readouterr().err


def test_analyze_missing_file(tmp_path):
    assert run_cli(["analyze", "--server", str(tmp_path / "s"), "--client", str(tmp_path / "c")], env={}) == 2


def test_report_paired_and_plot(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run_cli(["simulate", "--out", str(a), "--seed", "1", *FAST], env={}) == 0
    assert run_cli(["simulate", "--out", str(b), "--seed", "2", *FAST], env={}) == 0
    plot = tmp_path / "plot.csv"
    rc = run_cli(
        [
            "report",
            "--server", str(a / "sim-s1-t1-server.csv"), "--client", str(a / "sim-s1-t1-client.csv"),
            "--vs-server", str(b / "sim-s2-t1-server.csv"), "--vs-client", str(b / "sim-s2-t1-client.csv"),
            "--plot-csv", str(plot),
        ],
        env={},
    )
    assert rc == 0
    text = capsys.readouterr().out
    assert "1.00/1.00" in text
    assert plot.read_text().startswith("run_id,seq,t_ms,")


def test_precedence_flag_env_config(tmp_path):
    conf = tmp_path / "c.conf"
    conf.write_text("run_id=from-config\nseed=9\n")
    out = tmp_path / "o1"
    env = {"WIBENCH_RUN_ID": "from-env"}
    assert run_cli(["simulate", "--config", str(conf), "--out", str(out), *FAST], env=env) == 0
    assert (out / "from-env-t1-client.csv").exists()
    out2 = tmp_path / "o2"
    assert run_cli(["simulate", "--config", str(conf), "--out", str(out2), "--run-id", "from-flag", *FAST], env=env) == 0
    assert (out2 / "from-flag-t1-client.csv").exists()
    out3 = tmp_path / "o3"
    assert run_cli(["simulate", "--out", str(out3), *FAST], env={"WIBENCH_CONFIG": str(conf)}) == 0
    assert (out3 / "from-config-t1-client.csv").exists()


def test_simulate_abort_exit_code(tmp_path):
    out = tmp_path / "out"
    assert run_cli(["simulate", "--out", str(out), "--abort-at", "5000", *FAST], env={}) == 2
    j = read_journal(out / "sim-s42-t1-client.csv")
    assert j.aborted


def test_serve_and_measure_over_loopback(tmp_path, free_port):
    size = 32 * 1024
    server_journal = tmp_path / "server.csv"
    client_journal = tmp_path / "client.csv"
    codes = {}
    serve = threading.Thread(
        target=lambda: codes.setdefault(
            "serve",
            run_cli(
                ["serve", "--sensors", "sim", "--host", "127.0.0.1", "--port", str(free_port),
                 "--interval-ms", "50", "--journal", str(server_journal), "--run-id", "lb", "-q"],
                env={},
            ),
        )
    )
    serve.start()
    time.sleep(0.3)
    with BlobServer(blob_payload(size)) as blob:
        host, port = blob.address
        codes["measure"] = run_cli(
            ["measure", "--server", f"127.0.0.1:{free_port}", "--backend", "blob", "--transfer", f"{host}:{port}",
             "--rate", "128KiB", "--interval-ms", "50", "--journal", str(client_journal), "--run-id", "lb", "-q"],
            env={},
        )
    serve.join(timeout=10)
    assert codes == {"serve": 0, "measure": 0}
    client = read_journal(client_journal)
    server = read_journal(server_journal)
    assert client.rows[-1].bytes_total == size
    assert client.header.started is not None
    # the server stops on the client's completion message
    assert abs(len(server.rows) - len(client.rows)) <= 3


def test_serve_real_sensors_need_path():
    assert run_cli(["serve", "--port", "0"], env={}) == 1
