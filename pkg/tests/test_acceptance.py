"""Acceptance gate: one test group per criterion, summarised at the end of the run."""

from __future__ import annotations

import hashlib
import json
import random
import subprocess
import sys
import time
from fractions import Fraction
from pathlib import Path

import pytest
from oracle import exact_pearson

from wibench.analysis import CorrelationMatrix, align, correlation_matrix, detect_throttle, pearson
from wibench.control import DEFAULT_TRIGGER, ControlListener, send_message, send_start
from wibench.errors import TransferAborted
from wibench.model import read_journal
from wibench.report import render_matrix
from wibench.sensors import FormatError, Ina219Config, ina219_convert, parse_cpu_temp, parse_w1_slave
from wibench.simulate import SimOptions, simulate_run
from wibench.thermal import SimScenario
from wibench.transfer import HashSink, StubFtpServer, ftp_close, ftp_open, ftp_retrieve, ftp_size

FIXTURES = Path(__file__).parent / "fixtures"


# -- 1 -----------------------------------------------------------------------

@pytest.mark.criterion(1, "Pearson oracle equivalence")
def _series_pairs(count: int):
    rng = random.Random(20240501)
    for i in range(count):
        n = rng.randint(2, 500)
        if i % 2:
            # raw uniform values over the full stated domain
            x = [rng.uniform(-1e6, 1e6) for _ in range(n)]
            y = [rng.uniform(-1e6, 1e6) for _ in range(n)]
        else:
            # correlated, offset and scaled data, the hard case for the sum formula
            offset = rng.choice([0.0, 50.0, 1e4, 1e6])
            scale = rng.choice([1e-3, 1.0, 100.0])
            x = [offset + scale * rng.gauss(0, 1) for _ in range(n)]
            slope = rng.uniform(-2, 2)
            y = [slope * v + rng.gauss(0, 1) * scale for v in x]
        yield x, y


@pytest.mark.criterion(1, "Pearson oracle equivalence")
def test_pearson_matches_exact_oracle():
    pairs = list(_series_pairs(1000))
    start = time.perf_counter()
    ours = [pearson(x, y) for x, y in pairs]
    assert time.perf_counter() - start < 5.0
    worst = max(abs(r - exact_pearson(x, y)) for r, (x, y) in zip(ours, pairs))
    assert worst <= 1e-9


@pytest.mark.criterion(1, "Pearson oracle equivalence")
def test_pearson_hand_case():
    assert abs(pearson([1, 2, 3, 4], [1, 3, 2, 4]) - 0.8) <= 1e-12


# -- 2 -----------------------------------------------------------------------

W1_EXPECTED = json.loads((FIXTURES / "w1_slave" / "expected.json").read_text())
CPU_EXPECTED = json.loads((FIXTURES / "cpu_temp.json").read_text())


@pytest.mark.criterion(2, "Parser golden suite")
def test_fixture_coverage():
    assert len(W1_EXPECTED) >= 20
    assert sum(1 for v in CPU_EXPECTED.values() if isinstance(v, float)) >= 5
    values = [v for v in W1_EXPECTED.values() if isinstance(v, float)]
    assert min(values) == -55.0 and max(values) == 125.0
    assert "t=23437" in (FIXTURES / "w1_slave" / "01_room.txt").read_text()
    assert any(isinstance(v, str) for v in W1_EXPECTED.values())


@pytest.mark.criterion(2, "Parser golden suite")
@pytest.mark.parametrize("name", sorted(W1_EXPECTED))
def test_w1_golden(name):
    import wibench.sensors as sensors

    text = (FIXTURES / "w1_slave" / name).read_bytes().decode("utf-8")
    expected = W1_EXPECTED[name]
    if isinstance(expected, str):
        with pytest.raises(getattr(sensors, expected)):
            parse_w1_slave(text)
    else:
        assert parse_w1_slave(text) == expected


@pytest.mark.criterion(2, "Parser golden suite")
@pytest.mark.parametrize("text", sorted(CPU_EXPECTED))
def test_cpu_temp_golden(text):
    expected = CPU_EXPECTED[text]
    if expected == "FormatError":
        with pytest.raises(FormatError):
            parse_cpu_temp(text)
    else:
        assert parse_cpu_temp(text) == expected


# -- 3 -----------------------------------------------------------------------

@pytest.mark.criterion(3, "INA219 arithmetic")
def test_ina219_worked_example():
    assert ina219_convert(1253, 3400, Ina219Config(shunt_ohms=0.1)) == (5.012, 0.340)


@pytest.mark.criterion(3, "INA219 arithmetic")
def test_ina219_linearity():
    rng = random.Random(3)
    cfg = Ina219Config(shunt_ohms=0.1, bus_range_volts=32)
    for _ in range(1000):
        bus = rng.randint(0, 7999)  # 8000 counts is the 32 V ceiling
        shunt = rng.randint(-0x8000, 0x7FFF)
        volts, amps = ina219_convert(bus, shunt, cfg)
        # one count is 4 mV on the bus and 10 uV / 0.1 ohm = 0.1 mA on the shunt
        assert volts == float(Fraction(bus * 4, 1000))
        assert amps == float(Fraction(shunt, 10000))
        if shunt < 0x7FFF:
            v2, a2 = ina219_convert(bus + 1, shunt + 1, cfg)
            assert abs((v2 - volts) - 0.004) < 1e-12
            assert abs((a2 - amps) - 0.0001) < 1e-12


# -- 4 and 5 -----------------------------------------------------------------

SIM_ARGS = ["simulate", "--seed", "42", "--file-size", "655KiB", "--rate", "131KiB", "--interval-ms", "50"]


def _run_sim(out: Path) -> tuple[subprocess.CompletedProcess, float]:
    start = time.perf_counter()
    proc = subprocess.run(
        [sys.executable, "-m", "wibench", *SIM_ARGS, "--out", str(out)],
        capture_output=True,
        text=True,
        timeout=60,
    )
    return proc, time.perf_counter() - start


@pytest.fixture(scope="module")
def sim_outputs(tmp_path_factory):
    runs = []
    for name in ("first", "second"):
        out = tmp_path_factory.mktemp(name)
        proc, wall = _run_sim(out)
        runs.append((out, proc, wall))
    return runs


@pytest.mark.criterion(4, "End-to-end simulation")
def test_sim_completes_quickly(sim_outputs):
    out, proc, wall = sim_outputs[0]
    assert proc.returncode == 0, proc.stderr
    assert wall < 10.0


@pytest.mark.criterion(4, "End-to-end simulation")
def test_sim_client_journal(sim_outputs):
    out = sim_outputs[0][0]
    client = read_journal(out / "sim-s42-t1-client.csv")
    assert 95 <= len(client.rows) <= 115
    assert sum(r.bytes_delta for r in client.rows) == 670720
    assert client.aborted is None


@pytest.mark.criterion(4, "End-to-end simulation")
def test_sim_alignment_and_matrix(sim_outputs):
    out = sim_outputs[0][0]
    server = read_journal(out / "sim-s42-t1-server.csv")
    client = read_journal(out / "sim-s42-t1-client.csv")
    table = align(server, client)
    assert table.dropped == 0
    m = correlation_matrix(table)
    assert m.is_symmetric()
    assert all(m.r[i][i] == 1.0 for i in range(len(m.labels)))
    assert all(abs(v) <= 1.0 for row in m.r for v in row if v is not None)
    report = (out / "sim-s42-report.txt").read_text()
    assert "Pearson correlation" in report and "1.00" in report


def _digests(out: Path) -> dict[str, str]:
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(out.iterdir())}


@pytest.mark.criterion(5, "Determinism")
def test_sim_byte_identical(sim_outputs):
    (a, pa, _), (b, pb, _) = sim_outputs
    assert pa.returncode == pb.returncode == 0
    da, db = _digests(a), _digests(b)
    assert set(da) == {"sim-s42-t1-server.csv", "sim-s42-t1-client.csv", "sim-s42-report.txt"}
    assert da == db


# -- 6 -----------------------------------------------------------------------

@pytest.mark.criterion(6, "Handshake conformance")
def test_trigger_fires_one_event():
    assert len(DEFAULT_TRIGGER.encode("utf-8")) == 31
    with ControlListener(port=0, host="127.0.0.1") as listener:
        sent = time.monotonic()
        send_start(("127.0.0.1", listener.port), DEFAULT_TRIGGER)
        event = listener.await_start(timeout=1.0)
        assert event is not None
        assert event.payload == DEFAULT_TRIGGER
        assert event.received_at - sent <= 0.1
        assert listener.await_start(timeout=0.2) is None


@pytest.mark.criterion(6, "Handshake conformance")
def test_wrong_payload_fires_none():
    with ControlListener(port=0, host="127.0.0.1") as listener:
        send_message(("127.0.0.1", listener.port), "download from HTTP is running...")
        assert listener.await_start(timeout=0.3) is None
        assert len(listener.rejected) == 1


# -- 7 -----------------------------------------------------------------------

@pytest.mark.criterion(7, "FTP subset interop")
@pytest.mark.parametrize("size", [0, 1, 65535, 65536, 1048576])
def test_ftp_sizes(ftp_root, size):
    data = random.Random(size).randbytes(size)
    (ftp_root / "f.bin").write_bytes(data)
    with StubFtpServer(ftp_root) as server:
        session = ftp_open(*server.address)
        try:
            assert ftp_size(session, "f.bin") == size
            sink = HashSink()
            got = ftp_retrieve(session, "f.bin", sink)
        finally:
            ftp_close(session)
    assert got == size == session.counter.value == sink.size
    assert sink.hexdigest() == hashlib.sha256(data).hexdigest()
    assert session.status == "complete"


@pytest.mark.criterion(7, "FTP subset interop")
def test_ftp_abort_at_half(ftp_root):
    size = 1048576
    (ftp_root / "f.bin").write_bytes(bytes(size))
    with StubFtpServer(ftp_root, abort_at=size // 2) as server:
        session = ftp_open(*server.address)
        try:
            with pytest.raises(TransferAborted) as exc:
                ftp_retrieve(session, "f.bin", HashSink())
        finally:
            ftp_close(session)
    assert session.counter.value == size // 2
    assert exc.value.received == size // 2
    assert session.status == "failed"


# -- 8 -----------------------------------------------------------------------

THROTTLE_SCENARIO = SimScenario(seed=7, ambient_c=45.0, initial_temp_c=60.0, offered_load=100.0, load_noise=2.0)


@pytest.mark.criterion(8, "Throttle qualitative reproduction")
def test_throttle_episodes_match_simulator():
    opts = SimOptions(
        file_size=600 * 1024,
        rate=1024,
        interval_ms=5000,
        realtime=False,
        run_id="hot",
        scenario=THROTTLE_SCENARIO,
    )
    run = simulate_run(opts)
    assert run.error is None
    table = align(run.server, run.client)
    episodes = detect_throttle(table)
    assert episodes
    last = table.rows[-1].seq
    transitions = run.device.throttle_transitions(last)
    assert [e.start_seq for e in episodes] == transitions

    inside = set()
    for e in episodes:
        inside.update(range(e.start_seq, e.end_seq + 1))
    # seq 0 carries no interval, so it is left out of both means
    speeds_in = [r.speed for r in table.rows if r.seq in inside]
    speeds_out = [r.speed for r in table.rows if r.seq not in inside and r.seq > 0]
    mean_in = sum(speeds_in) / len(speeds_in)
    mean_out = sum(speeds_out) / len(speeds_out)
    assert mean_in <= 0.6 * mean_out


# -- 9 -----------------------------------------------------------------------

def _matrix(speed_load: float) -> CorrelationMatrix:
    labels = ("speed", "cpu_load", "cpu_temp", "ext_temp", "voltage", "current")
    r = [[1.0 if i == j else 0.1 for j in range(6)] for i in range(6)]
    r[0][1] = r[1][0] = speed_load
    return CorrelationMatrix(labels, tuple(tuple(row) for row in r))


@pytest.mark.criterion(9, "Paired matrix format fidelity")
def test_paired_cell():
    text = render_matrix(_matrix(0.55), _matrix(0.38))
    lines = text.splitlines()
    load_row = next(l for l in lines if l.startswith("CPU load"))
    assert "0.55/0.38" in load_row
    assert "1.00/1.00" in load_row


@pytest.mark.criterion(9, "Paired matrix format fidelity")
def test_single_matrix_diagonal():
    text = render_matrix(_matrix(0.55))
    rows = text.splitlines()[1:]
    for i, line in enumerate(rows):
        cells = line.split("  ")
        assert cells[-1].strip() == "1.00"
    assert "0.55" in rows[1]
