"""Shared pieces of both transfer backends: the progress counter and pacing."""

from __future__ import annotations

import hashlib
import math
import socket
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Protocol

from ..clock import LogicalClock
from ..errors import ProtocolError, TransferAborted

CHUNK = 64 * 1024

STATUSES = ("connecting", "transferring", "complete", "failed")


class ByteCounter:
    """Cumulative received-bytes counter: one writer, any number of readers."""

    def __init__(self):
        self._value = 0
        self._closed = False
        self._cond = threading.Condition()

    def add(self, n: int) -> None:
        if n < 0:
            raise ValueError("counter only moves forward")
        with self._cond:
            self._value += n
            self._cond.notify_all()

    @property
    def value(self) -> int:
        with self._cond:
            return self._value

    @property
    def closed(self) -> bool:
        return self._closed

    def close(self) -> None:
        """Mark the writer as finished; wakes every waiter."""
        with self._cond:
            self._closed = True
            self._cond.notify_all()

    def wait_for(self, target: int | float, timeout: float | None = None) -> int:
        with self._cond:
            self._cond.wait_for(lambda: self._value >= target or self._closed, timeout)
            return self._value


def progress_snapshot(counter: ByteCounter) -> int:
    return counter.value


@dataclass
class TransferSession:
    backend: str
    remote_size: int | None = None
    counter: ByteCounter = field(default_factory=ByteCounter)
    status: str = "connecting"
    error: BaseException | None = None
    handle: Any = None  # ftplib.FTP or the blob socket

    def complete(self) -> None:
        self.status = "complete"
        self.counter.close()

    def fail(self, exc: BaseException) -> None:
        self.status = "failed"
        self.error = exc
        self.counter.close()


class HashSink:
    """Byte sink that keeps only a running SHA-256 and a length."""

    def __init__(self):
        self._h = hashlib.sha256()
        self.size = 0

    def write(self, data: bytes) -> int:
        self._h.update(data)
        self.size += len(data)
        return len(data)

    def hexdigest(self) -> str:
        return self._h.hexdigest()


class Limiter(Protocol):
    def budget(self, consumed: int, want: int) -> int:
        """Block until reading is allowed; return how many bytes may be read (0 = cancelled)."""
        ...


class TokenBucket:
    """Wall-clock pacing: at most ``floor(rate * elapsed)`` bytes after ``elapsed`` seconds."""

    def __init__(self, rate: int, cancel: threading.Event | None = None):
        if rate <= 0:
            raise ValueError("rate must be positive")
        self.rate = rate
        self.cancel = cancel or threading.Event()
        self._t0: float | None = None

    def budget(self, consumed: int, want: int) -> int:
        if self._t0 is None:
            self._t0 = time.monotonic()
        while True:
            elapsed = time.monotonic() - self._t0
            allowed = math.floor(self.rate * elapsed) - consumed
            if allowed > 0:
                return min(want, allowed)
            wait = (consumed + 1) / self.rate - elapsed
            if self.cancel.wait(max(wait, 0.0005)):
                return 0


class LockstepBudget:
    """Pacing tied to a :class:`LogicalClock`: ``allowance(tick)`` bytes by each tick."""

    def __init__(self, allowance: Callable[[int], float], clock: LogicalClock):
        self.allowance = allowance
        self.clock = clock

    def budget(self, consumed: int, want: int) -> int:
        while True:
            tick = self.clock.tick
            allowed = self.allowance(tick) - consumed
            if allowed > 0:
                return int(min(want, allowed))
            if not self.clock.wait_tick(tick + 1):
                if self.clock.closed:
                    return 0


def pump(sock: socket.socket, session: TransferSession, total: int, sink=None, limiter: Limiter | None = None) -> int:
    """Copy exactly ``total`` bytes from ``sock`` into ``sink``, bumping the counter per chunk."""
    counter = session.counter
    received = counter.value
    try:
        while received < total:
            want = min(CHUNK, total - received)
            if limiter is not None:
                want = limiter.budget(received, want)
                if want <= 0:
                    raise TransferAborted(f"cancelled after {received} of {total} bytes", received)
            data = sock.recv(want)
            if not data:
                raise TransferAborted(f"connection closed after {received} of {total} bytes", received)
            if sink is not None:
                sink.write(data)
            counter.add(len(data))
            received += len(data)
        extra = sock.recv(1)
    except (socket.timeout, ConnectionError) as exc:
        raise TransferAborted(f"{type(exc).__name__} after {received} of {total} bytes", received) from None
    if extra:
        raise ProtocolError(f"peer sent more than the announced {total} bytes")
    return received
