"""Sampling schedules.

Every agent stamps sample ``k`` with ``t_ms = k * interval_ms`` no matter when
the read actually happened. The tickers below only decide *when* tick ``k``
is allowed to fire.
"""

from __future__ import annotations

import logging
import threading
import time

log = logging.getLogger(__name__)


class LogicalClock:
    """A tick counter shared by the agents of one in-process simulation."""

    def __init__(self):
        self._tick = -1
        self._closed = False
        self._cond = threading.Condition()

    @property
    def tick(self) -> int:
        with self._cond:
            return self._tick

    @property
    def closed(self) -> bool:
        return self._closed

    def advance(self, tick: int) -> None:
        with self._cond:
            if tick > self._tick:
                self._tick = tick
                self._cond.notify_all()

    def close(self) -> None:
        with self._cond:
            self._closed = True
            self._cond.notify_all()

    def wait_tick(self, tick: int, stop: threading.Event | None = None, timeout: float | None = None) -> bool:
        """Block until the clock reaches ``tick``.

        Returns False if the clock is closed, ``stop`` is set or ``timeout``
        expires first. A tick that has already been reached always wins over
        a pending stop request.
        """
        deadline = None if timeout is None else time.monotonic() + timeout
        with self._cond:
            while self._tick < tick:
                if self._closed or (stop is not None and stop.is_set()):
                    return False
                wait = 0.05
                if deadline is not None:
                    wait = min(wait, deadline - time.monotonic())
                    if wait <= 0:
                        return False
                self._cond.wait(wait)
            return True


class WallTicker:
    """Fire tick ``k`` at ``start + k * interval`` on the monotonic clock."""

    def __init__(self, interval_ms: int, stop: threading.Event | None = None):
        self.interval = interval_ms / 1000.0
        self.stop = stop or threading.Event()
        self._t0: float | None = None

    def start(self) -> None:
        self._t0 = time.monotonic()

    def wait_tick(self, tick: int) -> bool:
        if self._t0 is None:
            self.start()
        target = self._t0 + tick * self.interval
        remaining = target - time.monotonic()
        if remaining > 0:
            if self.stop.wait(remaining):
                return False
        elif -remaining > self.interval / 2:
            log.warning("tick %d fired %.0f ms late", tick, -remaining * 1000)
        return not self.stop.is_set()


class FollowerTicker:
    """Wait for ticks advanced by someone else on a :class:`LogicalClock`."""

    def __init__(self, clock: LogicalClock, stop: threading.Event | None = None):
        self.clock = clock
        self.stop = stop or threading.Event()

    def start(self) -> None:
        pass

    def wait_tick(self, tick: int) -> bool:
        return self.clock.wait_tick(tick, self.stop)


class DriverTicker:
    """Advance a :class:`LogicalClock`, optionally pacing it in real time."""

    def __init__(
        self,
        clock: LogicalClock,
        interval_ms: int,
        realtime: bool = True,
        stop: threading.Event | None = None,
    ):
        self.clock = clock
        self.realtime = realtime
        self.stop = stop or threading.Event()
        self._wall = WallTicker(interval_ms, self.stop)

    def start(self) -> None:
        self._wall.start()

    def wait_tick(self, tick: int) -> bool:
        if self.realtime and not self._wall.wait_tick(tick):
            return False
        if self.stop.is_set():
            return False
        self.clock.advance(tick)
        return True
