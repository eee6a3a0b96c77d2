"""The server agent (telemetry loop) and the client agent (download + speed sampler)."""

from __future__ import annotations

import logging
import socket
import sys
import threading
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable

from .clock import DriverTicker, FollowerTicker, LogicalClock, WallTicker
from .control import DEFAULT_PORT, DEFAULT_TRIGGER, ControlListener, send_done, send_start
from .errors import ControlError, RunAborted, SensorError, SizeMismatch, WibenchError
from .model import ClientSample, Journal, JournalWriter, RunHeader, quantize
from .sensors import (
    CommandTempSource,
    Ina219Config,
    Ina219Source,
    PsutilLoadSource,
    SensorSuite,
    Smbus2Bus,
    W1FileSource,
    suite_sample,
)
from .transfer import (
    HashSink,
    LockstepBudget,
    TokenBucket,
    TransferSession,
    blob_open,
    blob_receive,
    ftp_close,
    ftp_open,
    ftp_retrieve,
    ftp_size,
    progress_snapshot,
)

log = logging.getLogger(__name__)


@dataclass
class RunConfig:
    role: str = "client"
    run_id: str = "run"
    interval_ms: int = 5000
    device_label: str = ""
    distance_label: str = ""
    # control channel
    control_host: str = "127.0.0.1"
    control_port: int = DEFAULT_PORT
    listen_host: str = "0.0.0.0"
    trigger: str = DEFAULT_TRIGGER
    ack: bool = False
    send_done: bool = True
    # transfer (client)
    backend: str = "ftp"
    transfer_host: str = "127.0.0.1"
    transfer_port: int = 21
    path: str = ""
    user: str = "anonymous"
    password: str = "anonymous@"
    rate_limit: int | None = None
    expected_size: int | None = None
    # sensors (server)
    sensors: str = "real"
    w1_path: str = ""
    cpu_temp_cmd: str = "vcgencmd measure_temp"
    i2c_bus: int = 1
    shunt_ohms: float = 0.1
    max_expected_amps: float = 0.2
    bus_range_volts: int = 16
    sentinel_on_error: bool = False
    # run control
    journal_path: str | None = None
    max_samples: int = 10_000
    trials: int = 1
    quiet: bool = False
    stamp_start: bool = True

    def __post_init__(self):
        if self.role not in ("server", "client"):
            raise ValueError(f"role must be server or client, got {self.role!r}")
        if self.interval_ms < 10:
            raise ValueError("interval_ms must be at least 10")
        if self.max_samples < 1:
            raise ValueError("max_samples must be at least 1")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if self.backend not in ("ftp", "blob"):
            raise ValueError(f"backend must be ftp or blob, got {self.backend!r}")

    def header(self, file_size: int | None = None) -> RunHeader:
        started = None
        if self.stamp_start:
            started = datetime.now(timezone.utc).replace(microsecond=0).isoformat()
        return RunHeader(
            run_id=self.run_id,
            role=self.role,
            interval_ms=self.interval_ms,
            device_label=self.device_label,
            distance_label=self.distance_label,
            file_size_bytes=file_size,
            started=started,
        )


def _echo(line: str) -> None:
    sys.stdout.write(line)
    sys.stdout.flush()


# -- server -----------------------------------------------------------------

def real_suite(cfg: RunConfig) -> SensorSuite:
    if not cfg.w1_path:
        raise ValueError("real sensors need the path of the DS18B20 w1_slave file")
    ina_cfg = Ina219Config(cfg.shunt_ohms, cfg.max_expected_amps, cfg.bus_range_volts)
    return SensorSuite(
        temp_ext=W1FileSource(cfg.w1_path),
        temp_cpu=CommandTempSource(cfg.cpu_temp_cmd.split()),
        power=Ina219Source(Smbus2Bus(cfg.i2c_bus), ina_cfg),
        load=PsutilLoadSource(),
        sentinel_on_error=cfg.sentinel_on_error,
    )


def run_server_agent(
    cfg: RunConfig,
    suite: SensorSuite | None = None,
    *,
    listener: ControlListener | None = None,
    clock: LogicalClock | None = None,
    stop: threading.Event | None = None,
    echo: Callable[[str], None] | None = None,
) -> Journal:
    """Wait for the start trigger, then sample the suite once per tick.

    Stops after ``max_samples`` rows, when ``stop`` is set, or when the client
    reports completion with ``done``. A sensor failure aborts the run with
    :class:`RunAborted`; the journal keeps the rows taken before it.
    """
    if suite is None:
        suite = real_suite(cfg)
    stop = stop or threading.Event()
    if echo is None:
        echo = (lambda line: None) if cfg.quiet else _echo
    own_listener = listener is None
    if listener is None:
        listener = ControlListener(cfg.control_port, cfg.listen_host, cfg.trigger, cfg.ack)
    writer = JournalWriter(cfg.header(), cfg.journal_path)
    watcher = None
    try:
        event = listener.await_start(stop)
        if event is None:
            return writer.journal
        log.info("start trigger from %s:%d", *event.peer)
        watcher = threading.Thread(target=listener.serve_running, args=(stop,), daemon=True)
        watcher.start()
        ticker = FollowerTicker(clock, stop) if clock is not None else WallTicker(cfg.interval_ms, stop)
        ticker.start()
        for seq in range(cfg.max_samples):
            if not ticker.wait_tick(seq):
                break
            try:
                sample = suite_sample(suite, seq, cfg.interval_ms)
            except SensorError as exc:
                writer.abort(str(exc))
                raise RunAborted(str(exc), writer.journal) from exc
            echo(writer.append(sample))
        return writer.journal
    finally:
        stop.set()
        if watcher is not None:
            watcher.join(timeout=2)
        if own_listener:
            listener.close()
        writer.close()


# -- client -----------------------------------------------------------------

def sample_speed(prev_total: int, cur_total: int, interval: float) -> float:
    """Bytes per second over one sampling interval."""
    if interval <= 0:
        raise ValueError("interval must be positive")
    if cur_total < prev_total:
        raise ValueError("cumulative byte count went backwards")
    return (cur_total - prev_total) / interval


class BlobBackend:
    def __init__(self, addr: tuple[str, int], expected_size: int | None = None, timeout: float = 10.0):
        self.addr = addr
        self.expected_size = expected_size
        self.timeout = timeout

    def open(self) -> TransferSession:
        session = blob_open(self.addr, self.timeout)
        if self.expected_size is not None and session.remote_size != self.expected_size:
            session.handle.close()
            raise SizeMismatch(
                f"server announces {session.remote_size} bytes, expected {self.expected_size}"
            )
        return session

    def run(self, session: TransferSession, sink, limiter) -> int:
        return blob_receive(session, sink, limiter)

    def cancel(self, session: TransferSession) -> None:
        try:
            session.handle.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass


class FtpBackend:
    def __init__(self, host: str, port: int, path: str, user: str = "anonymous", password: str = "anonymous@", timeout: float = 10.0):
        self.host = host
        self.port = port
        self.path = path
        self.user = user
        self.password = password
        self.timeout = timeout

    def open(self) -> TransferSession:
        session = ftp_open(self.host, self.port, self.user, self.password, self.timeout)
        try:
            ftp_size(session, self.path)
        except BaseException:
            ftp_close(session)
            raise
        return session

    def run(self, session: TransferSession, sink, limiter) -> int:
        try:
            return ftp_retrieve(session, self.path, sink, limiter)
        finally:
            ftp_close(session)

    def cancel(self, session: TransferSession) -> None:
        try:
            session.handle.sock.shutdown(socket.SHUT_RDWR)
        except (OSError, AttributeError):
            pass


def make_backend(cfg: RunConfig):
    if cfg.backend == "blob":
        return BlobBackend((cfg.transfer_host, cfg.transfer_port), cfg.expected_size)
    if not cfg.path:
        raise ValueError("the FTP backend needs a remote path")
    return FtpBackend(cfg.transfer_host, cfg.transfer_port, cfg.path, cfg.user, cfg.password)


def run_client_agent(
    cfg: RunConfig,
    backend=None,
    *,
    clock: LogicalClock | None = None,
    allowance: Callable[[int], float] | None = None,
    realtime: bool = True,
    settle_timeout: float = 10.0,
    echo: Callable[[str], None] | None = None,
) -> Journal:
    """Open the transfer, trigger the server, then download while sampling progress.

    With ``clock`` the sampler drives a shared logical clock; ``allowance``
    then gives the cumulative byte budget per tick and the sampler waits for
    the transfer to use it before each snapshot, which makes the journal
    reproducible. Without ``clock`` the sampler runs on wall time.
    """
    backend = backend or make_backend(cfg)
    if echo is None:
        echo = (lambda line: None) if cfg.quiet else _echo
    session = backend.open()
    size = session.remote_size
    writer = JournalWriter(cfg.header(size), cfg.journal_path)
    control = (cfg.control_host, cfg.control_port)
    stop = threading.Event()
    transfer_thread = None
    try:
        try:
            send_start(control, cfg.trigger, cfg.ack)
        except ControlError:
            backend.cancel(session)
            raise

        if clock is not None:
            ticker = DriverTicker(clock, cfg.interval_ms, realtime, stop)
            limiter = LockstepBudget(allowance, clock) if allowance is not None else None
        else:
            ticker = WallTicker(cfg.interval_ms, stop)
            limiter = TokenBucket(cfg.rate_limit, stop) if cfg.rate_limit else None

        sink = HashSink()

        def transfer():
            try:
                backend.run(session, sink, limiter)
            except WibenchError as exc:
                log.warning("transfer failed: %s", exc)
            except Exception as exc:  # keep the sampler informed about anything else too
                session.fail(exc)

        transfer_thread = threading.Thread(target=transfer, name="transfer", daemon=True)
        ticker.start()
        transfer_thread.start()

        interval_s = cfg.interval_ms / 1000.0
        prev = 0
        complete = False
        for seq in range(cfg.max_samples):
            if not ticker.wait_tick(seq):
                break
            if allowance is not None:
                target = min(size, allowance(seq))
                got = session.counter.wait_for(target, settle_timeout)
                if got < target and not session.counter.closed:
                    log.warning("tick %d: transfer lagging (%d of %d bytes)", seq, got, target)
            total = progress_snapshot(session.counter)
            delta = total - prev
            speed = int(quantize(sample_speed(prev, total, interval_s), 0))
            pct = 100.0 if size == 0 else min(100.0, 100.0 * total / size)
            if total == size:
                pct = 100.0
            echo(writer.append(ClientSample(seq, seq * cfg.interval_ms, total, delta, speed, pct)))
            prev = total
            if total == size:
                complete = True
                break
            if session.status == "failed":
                break

        if not complete:
            if session.status == "failed":
                reason = f"{type(session.error).__name__}: {session.error}"
            elif stop.is_set():
                reason = "stopped"
            else:
                reason = f"max_samples {cfg.max_samples} reached before completion"
            writer.abort(reason)
            raise RunAborted(reason, writer.journal)
        return writer.journal
    finally:
        stop.set()
        if clock is not None:
            clock.close()
        if transfer_thread is not None:
            transfer_thread.join(timeout=1.0)
            if transfer_thread.is_alive():
                backend.cancel(session)
                transfer_thread.join(timeout=5.0)
        writer.close()
        if cfg.send_done:
            try:
                send_done(control, cfg.ack)
            except ControlError as exc:
                log.warning("could not report completion: %s", exc)


# -- trials -----------------------------------------------------------------

@dataclass
class TrialResult:
    index: int
    run_id: str
    server: Journal | None = None
    client: Journal | None = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def trial_config(cfg: RunConfig, k: int) -> RunConfig:
    """Config of trial ``k`` (1-based): run id gets ``-t<k>``, journal path likewise."""
    run_id = f"{cfg.run_id}-t{k}"
    path = cfg.journal_path
    if path is not None:
        p = Path(path)
        path = str(p.with_name(f"{p.stem}-t{k}{p.suffix}"))
    return replace(cfg, run_id=run_id, journal_path=path, trials=1)


def run_trials(cfg: RunConfig, trial_fn: Callable[[RunConfig, int], tuple]) -> list[TrialResult]:
    """Repeat ``trial_fn`` ``cfg.trials`` times; a failing trial does not stop the others.

    ``trial_fn(cfg_k, k)`` returns ``(server_journal, client_journal)``.
    """
    results = []
    for k in range(1, cfg.trials + 1):
        cfg_k = trial_config(cfg, k)
        result = TrialResult(k, cfg_k.run_id)
        try:
            result.server, result.client = trial_fn(cfg_k, k)
        except RunAborted as exc:
            result.error = exc.reason
            if exc.journal is not None:
                setattr(result, exc.journal.role, exc.journal)
            log.error("trial %d aborted: %s", k, exc.reason)
        except WibenchError as exc:
            result.error = str(exc)
            log.error("trial %d failed: %s", k, exc)
        results.append(result)
    return results
