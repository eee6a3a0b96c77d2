"""Raw TCP blob channel: an 8-byte big-endian size header, then the bytes."""

from __future__ import annotations

import logging
import random
import socket
import struct
import threading

from ..errors import BindError, ConnectError, SizeMismatch, TransferAborted
from .core import ByteCounter, Limiter, TokenBucket, TransferSession, pump

log = logging.getLogger(__name__)

HEADER = struct.Struct(">Q")


def blob_payload(size: int, seed: int = 0) -> bytes:
    return random.Random(seed).randbytes(size)


class BlobServer:
    """Serve one payload to every connecting client."""

    def __init__(
        self,
        payload: bytes,
        host: str = "127.0.0.1",
        port: int = 0,
        announce_size: int | None = None,
        abort_at: int | None = None,
    ):
        self.payload = payload
        self.announce_size = len(payload) if announce_size is None else announce_size
        self.abort_at = abort_at
        self.host = host
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        try:
            self._sock.bind((host, port))
        except OSError as exc:
            self._sock.close()
            raise BindError(f"cannot bind blob server to {host}:{port}: {exc}") from None
        self._sock.listen(8)
        self._sock.settimeout(0.05)
        self.port = self._sock.getsockname()[1]
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._serve, name="blob-server", daemon=True)
        self._thread.start()

    @property
    def address(self) -> tuple[str, int]:
        return self.host, self.port

    def close(self) -> None:
        self._stop.set()
        try:
            self._sock.close()
        except OSError:
            pass
        self._thread.join(timeout=5)

    def __enter__(self) -> BlobServer:
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _serve(self) -> None:
        while not self._stop.is_set():
            try:
                conn, _ = self._sock.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            conn.settimeout(None)
            threading.Thread(target=self._send, args=(conn,), daemon=True).start()

    def _send(self, conn: socket.socket) -> None:
        body = self.payload if self.abort_at is None else self.payload[: self.abort_at]
        try:
            with conn:
                conn.sendall(HEADER.pack(self.announce_size))
                view = memoryview(body)
                for i in range(0, len(view), 1 << 16):
                    conn.sendall(view[i : i + (1 << 16)])
                conn.shutdown(socket.SHUT_WR)
        except OSError as exc:
            log.debug("blob client went away: %s", exc)


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        part = sock.recv(n - len(buf))
        if not part:
            raise TransferAborted("connection closed inside the size header")
        buf += part
    return bytes(buf)


def blob_open(addr: tuple[str, int], timeout: float = 10.0) -> TransferSession:
    """Connect and read the size header; the body is left for :func:`blob_receive`."""
    try:
        sock = socket.create_connection(addr, timeout=timeout)
    except OSError as exc:
        raise ConnectError(f"cannot reach blob server {addr[0]}:{addr[1]}: {exc}") from None
    try:
        (size,) = HEADER.unpack(_recv_exact(sock, HEADER.size))
    except (TransferAborted, OSError):
        sock.close()
        raise
    return TransferSession(backend="blob", remote_size=size, handle=sock)


def blob_receive(session: TransferSession, sink=None, limiter: Limiter | None = None) -> int:
    sock: socket.socket = session.handle
    session.status = "transferring"
    try:
        with sock:
            total = pump(sock, session, session.remote_size, sink, limiter)
    except BaseException as exc:
        session.fail(exc)
        raise
    session.complete()
    return total


def blob_fetch(
    addr: tuple[str, int],
    expected_size: int,
    rate_limit: int | None = None,
    counter: ByteCounter | None = None,
    *,
    sink=None,
    limiter: Limiter | None = None,
    timeout: float = 10.0,
) -> int:
    """Download a blob, optionally paced to ``rate_limit`` bytes per second."""
    session = blob_open(addr, timeout)
    if counter is not None:
        session.counter = counter
    if session.remote_size != expected_size:
        session.handle.close()
        raise SizeMismatch(f"server announces {session.remote_size} bytes, expected {expected_size}")
    if limiter is None and rate_limit is not None:
        limiter = TokenBucket(rate_limit)
    return blob_receive(session, sink, limiter)
