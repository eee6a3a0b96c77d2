"""Start handshake between the client and server agents.

One short UTF-8 message per TCP connection, no framing: the sender writes
the payload and closes. The server starts measuring when the payload equals
the trigger string. While a run is in progress the same port accepts a
``done`` message (client finished) and rejects further triggers as busy.
"""

from __future__ import annotations

import logging
import socket
import threading
import time
from dataclasses import dataclass

from .errors import BindError, Busy, ConnectError, TriggerMismatch, WriteError

log = logging.getLogger(__name__)

DEFAULT_PORT = 5555
DEFAULT_TRIGGER = "download from FTP is running..."
DONE_PAYLOAD = "done"
MAX_PAYLOAD = 1024
ACK = b"OK"


@dataclass(frozen=True)
class ControlMessage:
    kind: str  # "start" or "ack"
    payload: str

    def __post_init__(self):
        if self.kind not in ("start", "ack"):
            raise ValueError(f"unknown control message kind {self.kind!r}")
        if len(self.payload.encode("utf-8")) > MAX_PAYLOAD:
            raise ValueError(f"control payload longer than {MAX_PAYLOAD} bytes")


@dataclass(frozen=True)
class StartEvent:
    peer: tuple[str, int]
    received_at: float  # time.monotonic() at receipt
    payload: str


class ControlListener:
    """Listening end of the handshake. Binding happens in the constructor."""

    def __init__(
        self,
        port: int = DEFAULT_PORT,
        host: str = "0.0.0.0",
        trigger: str = DEFAULT_TRIGGER,
        ack: bool = False,
        read_timeout: float = 1.0,
    ):
        ControlMessage("start", trigger)
        self.trigger = trigger
        self.ack = ack
        self.read_timeout = read_timeout
        self.rejected: list[TriggerMismatch] = []
        self.done = threading.Event()
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            self._sock.bind((host, port))
        except OSError as exc:
            self._sock.close()
            raise BindError(f"cannot listen on {host}:{port}: {exc}") from None
        self._sock.listen(4)
        self._sock.settimeout(0.05)
        self.host = host
        self.port = self._sock.getsockname()[1]
        self._lock = threading.Lock()

    def close(self) -> None:
        self._sock.close()

    def __enter__(self) -> ControlListener:
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _next_message(self, stop: threading.Event | None, deadline: float | None):
        while True:
            if stop is not None and stop.is_set():
                return None
            if deadline is not None and time.monotonic() >= deadline:
                return None
            try:
                conn, peer = self._sock.accept()
            except socket.timeout:
                continue
            except OSError:
                return None  # listener closed
            payload = self._read_payload(conn)
            received_at = time.monotonic()
            return conn, peer, payload, received_at

    def _read_payload(self, conn: socket.socket) -> bytes:
        conn.settimeout(self.read_timeout)
        buf = bytearray()
        try:
            while len(buf) <= MAX_PAYLOAD:
                part = conn.recv(MAX_PAYLOAD + 1 - len(buf))
                if not part:
                    break
                buf += part
        except socket.timeout:
            pass  # sender kept the connection open; take what arrived
        except OSError as exc:
            log.warning("control read failed: %s", exc)
        return bytes(buf)

    def _reply_ok(self, conn: socket.socket) -> None:
        if self.ack:
            try:
                conn.sendall(ACK)
            except OSError as exc:
                log.warning("could not acknowledge: %s", exc)

    def _reject(self, exc: TriggerMismatch) -> None:
        log.warning("%s", exc)
        with self._lock:
            self.rejected.append(exc)

    def await_start(self, stop: threading.Event | None = None, timeout: float | None = None) -> StartEvent | None:
        """Block until a peer delivers the trigger; None if cancelled or timed out."""
        deadline = None if timeout is None else time.monotonic() + timeout
        while True:
            msg = self._next_message(stop, deadline)
            if msg is None:
                return None
            conn, peer, raw, received_at = msg
            text = raw.decode("utf-8", "replace")
            with conn:
                if len(raw) <= MAX_PAYLOAD and text == self.trigger:
                    self._reply_ok(conn)
                    return StartEvent(peer=peer, received_at=received_at, payload=text)
            self._reject(TriggerMismatch(f"unexpected payload {text[:64]!r} from {peer[0]}:{peer[1]}"))

    def serve_running(self, stop: threading.Event) -> None:
        """Handle connections while a measurement runs; sets ``stop`` on ``done``."""
        while not stop.is_set():
            msg = self._next_message(stop, None)
            if msg is None:
                return
            conn, peer, raw, _ = msg
            text = raw.decode("utf-8", "replace")
            with conn:
                if text == DONE_PAYLOAD:
                    self._reply_ok(conn)
                    self.done.set()
                    stop.set()
                    continue
            if text == self.trigger:
                self._reject(Busy(f"measurement already running; trigger from {peer[0]}:{peer[1]} ignored"))
            else:
                self._reject(TriggerMismatch(f"unexpected payload {text[:64]!r} from {peer[0]}:{peer[1]}"))


def await_start(
    listen_port: int = DEFAULT_PORT,
    trigger: str = DEFAULT_TRIGGER,
    host: str = "0.0.0.0",
    stop: threading.Event | None = None,
    timeout: float | None = None,
) -> StartEvent | None:
    with ControlListener(listen_port, host, trigger) as listener:
        return listener.await_start(stop, timeout)


def send_message(server_addr: tuple[str, int], payload: str, ack: bool = False, timeout: float = 5.0) -> None:
    data = ControlMessage("start", payload).payload.encode("utf-8")
    try:
        sock = socket.create_connection(server_addr, timeout=timeout)
    except OSError as exc:
        raise ConnectError(f"cannot reach {server_addr[0]}:{server_addr[1]}: {exc}") from None
    with sock:
        try:
            sock.sendall(data)
            sock.shutdown(socket.SHUT_WR)
        except OSError as exc:
            raise WriteError(f"sending to {server_addr[0]}:{server_addr[1]} failed: {exc}") from None
        if ack:
            try:
                reply = sock.recv(len(ACK))
            except OSError as exc:
                raise WriteError(f"no acknowledgement: {exc}") from None
            if reply != ACK:
                raise WriteError(f"peer did not acknowledge (got {reply!r})")


def send_start(server_addr: tuple[str, int], trigger: str = DEFAULT_TRIGGER, ack: bool = False, timeout: float = 5.0) -> None:
    send_message(server_addr, trigger, ack, timeout)


def send_done(server_addr: tuple[str, int], ack: bool = False, timeout: float = 5.0) -> None:
    send_message(server_addr, DONE_PAYLOAD, ack, timeout)
