"""Discrete-event engine: virtual clock, ordered event queue, seeded randomness.

Dispatch order is (fire_at, seq): ``seq`` is a global insertion counter, so
events scheduled for the same tick run in insertion order. Given the same
seed and the same scheduling calls, a run is reproducible event for event.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Iterable, Optional

import numpy as np
import structlog

from src.shell.contract import SimTime

log = structlog.get_logger()

RNG_STREAMS = ("population", "catalog", "behavior", "circuits", "latency", "agents", "adversary")


class SchedulingInPast(ValueError):
    """An event was scheduled before the current clock."""


@dataclass(frozen=True)
class Event:
    fire_at: SimTime
    seq: int
    target: int           # host id
    payload: Any

    @property
    def kind(self) -> str:
        return getattr(self.payload, "kind", type(self.payload).__name__)


Handler = Callable[[Event], None]


def make_rng_streams(seed: int) -> dict[str, np.random.Generator]:
    """Independent PCG64 generators per concern, all derived from one seed."""
    children = np.random.SeedSequence(seed).spawn(len(RNG_STREAMS))
    return {name: np.random.Generator(np.random.PCG64(child))
            for name, child in zip(RNG_STREAMS, children)}


class Engine:
    """Single-threaded discrete-event loop."""

    def __init__(
        self,
        latency_rng: Optional[np.random.Generator] = None,
        latency_range_ms: tuple[int, int] = (20, 200),
        record_log: bool = True,
    ) -> None:
        self._clock: SimTime = 0
        self._seq = 0
        self._queue: list[tuple[int, int, int, Any]] = []
        self._handlers: dict[int, Handler] = {}
        self._default_handler: Optional[Handler] = None
        self._latency_rng = latency_rng or np.random.default_rng(0)
        self._latency_range = latency_range_ms
        self._latency: dict[tuple[int, int], int] = {}
        self._record_log = record_log
        self._log: list[dict] = []
        self.dispatched = 0

    @property
    def clock(self) -> SimTime:
        return self._clock

    @property
    def pending(self) -> int:
        return len(self._queue)

    @property
    def event_log(self) -> list[dict]:
        return self._log

    def register(self, host_id: int, handler: Handler) -> None:
        self._handlers[host_id] = handler

    def set_default_handler(self, handler: Handler) -> None:
        self._default_handler = handler

    def schedule(self, at: SimTime, target: int, payload: Any) -> int:
        """Enqueue an event; returns its event id (the global sequence number)."""
        if at < self._clock:
            raise SchedulingInPast(f"cannot schedule at {at}, clock is {self._clock}")
        seq = self._seq
        self._seq += 1
        heapq.heappush(self._queue, (int(at), seq, target, payload))
        return seq

    def schedule_in(self, delay: SimTime, target: int, payload: Any) -> int:
        return self.schedule(self._clock + max(0, int(delay)), target, payload)

    def run_until(self, deadline: SimTime) -> int:
        """Dispatch every event with fire_at <= deadline (inclusive); returns the count."""
        count = 0
        while self._queue and self._queue[0][0] <= deadline:
            fire_at, seq, target, payload = heapq.heappop(self._queue)
            self._clock = fire_at
            event = Event(fire_at, seq, target, payload)
            if self._record_log:
                self._log.append({"tick": fire_at, "host": target, "kind": event.kind})
            handler = self._handlers.get(target, self._default_handler)
            if handler is not None:
                handler(event)
            count += 1
        self._clock = max(self._clock, deadline)
        self.dispatched += count
        log.debug("engine.run_until", deadline=deadline, dispatched=count, pending=len(self._queue))
        return count

    def latency(self, a: int, b: int) -> SimTime:
        """Constant per host pair, drawn once on first use."""
        key = (a, b) if a <= b else (b, a)
        value = self._latency.get(key)
        if value is None:
            low, high = self._latency_range
            value = int(self._latency_rng.integers(low, high + 1))
            self._latency[key] = value
        return value


def write_event_log(path: Path, records: Iterable[dict]) -> None:
    """One JSON object per line, keys sorted, so equal logs give equal bytes."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for record in records:
            f.write(json.dumps(record, sort_keys=True) + "\n")
