"""Deterministic event scheduling shared by the simulation and protocol endpoints.

A single `EventLoop` carries logical time for one process.  Callbacks run in
(time, enqueue order): the order is identical whether the loop jumps between
events (`run_until_idle`, used by tests and scenario runs) or paces them
against the wall clock (`run`, used by served components).
"""

from __future__ import annotations

import heapq
import itertools
import threading
import time
from typing import Any, Callable


class Handle:
    """Cancellation token for a scheduled callback."""

    __slots__ = ("when", "cancelled")

    def __init__(self, when: float):
        self.when = when
        self.cancelled = False

    def cancel(self) -> None:
        self.cancelled = True


class EventLoop:
    def __init__(self, start: float = 0.0):
        self._now = start
        self._queue: list[tuple[float, int, Handle, Callable, tuple]] = []
        self._seq = itertools.count()
        self._cond = threading.Condition()
        self._stopped = False

    def now(self) -> float:
        with self._cond:
            return self._now

    def call_at(self, when: float, fn: Callable, *args: Any) -> Handle:
        with self._cond:
            when = max(when, self._now)
            handle = Handle(when)
            heapq.heappush(self._queue, (when, next(self._seq), handle, fn, args))
            self._cond.notify_all()
            return handle

    def call_later(self, delay: float, fn: Callable, *args: Any) -> Handle:
        with self._cond:
            when = self._now + max(delay, 0.0)
            handle = Handle(when)
            heapq.heappush(self._queue, (when, next(self._seq), handle, fn, args))
            self._cond.notify_all()
            return handle

    def post(self, fn: Callable, *args: Any) -> Handle:
        """Thread-safe immediate scheduling (runs at the current logical time)."""
        return self.call_later(0.0, fn, *args)

    def _pop(self) -> tuple[Handle, Callable, tuple] | None:
        while self._queue:
            when, _, handle, fn, args = heapq.heappop(self._queue)
            if handle.cancelled:
                continue
            self._now = max(self._now, when)
            return handle, fn, args
        return None

    def run_until_idle(self, max_time: float | None = None) -> float:
        """Drain the queue in order, jumping logical time.  Returns final time."""
        while True:
            with self._cond:
                if not self._queue:
                    return self._now
                when = self._queue[0][0]
                if max_time is not None and when > max_time:
                    self._now = max_time
                    return self._now
                item = self._pop()
            if item is None:
                with self._cond:
                    return self._now
            _, fn, args = item
            fn(*args)

    def run(self, factor: float = 0.0) -> None:
        """Serve mode: execute events as they come due, waiting for posted work.

        `factor` is wall seconds per logical second; 0 runs events as fast as
        possible (logical time still advances by the scheduled amounts).
        """
        anchor_wall = time.monotonic()
        anchor_logical = self._now
        while True:
            with self._cond:
                while self._queue and self._queue[0][2].cancelled:
                    heapq.heappop(self._queue)  # never pace against dead timers
                while not self._queue and not self._stopped:
                    self._cond.wait(timeout=0.5)
                    # Re-anchor while idle: a quiet stretch must not turn into
                    # a burst of instantly-due events afterwards.
                    anchor_wall = time.monotonic()
                    anchor_logical = self._now
                    while self._queue and self._queue[0][2].cancelled:
                        heapq.heappop(self._queue)
                if self._stopped:
                    return
                when = self._queue[0][0]
                if factor > 0.0:
                    target_wall = anchor_wall + (when - anchor_logical) * factor
                    remaining = target_wall - time.monotonic()
                    if remaining > 0.0005:
                        self._cond.wait(timeout=min(remaining, 0.05))
                        continue
                item = self._pop()
            if item is None:
                continue
            _, fn, args = item
            fn(*args)

    def stop(self) -> None:
        with self._cond:
            self._stopped = True
            self._cond.notify_all()


class WallClock:
    """Adapter giving served components real timestamps without an EventLoop."""

    def now(self) -> float:
        return time.monotonic()
