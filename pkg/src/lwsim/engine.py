"""Discrete-event core: virtual clock, time-ordered queue and named RNG streams.

Times are milliseconds (floats). Events firing at the same instant are
dispatched in insertion order.
"""

from __future__ import annotations

import random
from enum import IntEnum
from typing import Any, Callable

from lwsim._kernels import EventQueue

MS_PER_DAY = 86_400_000.0


class EventKind(IntEnum):
    UPLINK_DUE = 0
    TX_END = 1
    RX1_OPEN = 2
    RX2_OPEN = 3
    ACK_TIMEOUT = 4
    DOWNLINK_DUE = 5
    SIM_END = 6


class SchedulingError(ValueError):
    """Raised when an event is scheduled before the current clock."""


class EventHandle:
    __slots__ = ("fire_at", "seq", "kind", "subject", "payload", "cancelled")

    def __init__(self, fire_at: float, seq: int, kind: int, subject: int, payload: Any):
        self.fire_at = fire_at
        self.seq = seq
        self.kind = kind
        self.subject = subject
        self.payload = payload
        self.cancelled = False

    def cancel(self) -> None:
        self.cancelled = True

    def __repr__(self) -> str:
        return (f"EventHandle({EventKind(self.kind).name}, t={self.fire_at!r}, "
                f"subject={self.subject}, cancelled={self.cancelled})")


Handler = Callable[[EventHandle], None]


class Simulator:
    """Single-threaded event loop.

    Handlers are registered per :class:`EventKind`; an event of a kind with no
    handler is dispatched (and counted) but otherwise ignored.
    """

    def __init__(self) -> None:
        self.now = 0.0
        self._queue = EventQueue()
        self._seq = 0
        self._handlers: dict[int, Handler] = {}
        self.dispatched = 0

    def on(self, kind: EventKind, handler: Handler) -> None:
        self._handlers[int(kind)] = handler

    def schedule(self, fire_at: float, kind: EventKind, subject: int = -1,
                 payload: Any = None) -> EventHandle:
        if fire_at < self.now:
            raise SchedulingError(
                f"cannot schedule {EventKind(kind).name} at {fire_at} before clock {self.now}")
        handle = EventHandle(fire_at, self._seq, int(kind), subject, payload)
        self._queue.push(fire_at, handle)
        self._seq += 1
        return handle

    def __len__(self) -> int:
        return len(self._queue)

    def peek_time(self) -> float | None:
        return self._queue.peek_time() if len(self._queue) else None

    def run_until(self, end: float) -> int:
        """Dispatch every pending event with ``fire_at <= end``.

        Returns the number of events dispatched by this call. The clock is left
        at the time of the last dispatched event (or unchanged if none fired).
        """
        queue = self._queue
        handlers = self._handlers
        pop = queue.pop
        peek = queue.peek_time
        count = 0
        while queue and peek() <= end:
            fire_at, handle = pop()
            if handle.cancelled:
                continue
            self.now = fire_at
            count += 1
            handler = handlers.get(handle.kind)
            if handler is not None:
                handler(handle)
        self.dispatched += count
        return count


def rng_stream(seed: int, stream_id: str) -> random.Random:
    """Independent generator for one purpose (placement, shadowing, traffic, ...).

    The same ``(seed, stream_id)`` always yields the same sequence; string seeds
    are hashed with SHA-512 by :class:`random.Random`, so this is stable across
    processes and platforms.
    """
    return random.Random(f"{int(seed)}/{stream_id}")
