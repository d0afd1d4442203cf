"""Deterministic discrete-event core."""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field
from typing import Any, Callable


@dataclass(order=True)
class SimEvent:
    time: float
    seq: int
    target: str = field(compare=False)
    action: Callable[..., Any] = field(compare=False, repr=False)
    args: tuple = field(compare=False, default=())


class EventQueue:
    """Events fire in (time, insertion sequence) order, so equal times are FIFO."""

    def __init__(self):
        self._heap: list[SimEvent] = []
        self._seq = itertools.count()
        self.now = 0.0
        self.processed = 0

    def __len__(self) -> int:
        return len(self._heap)

    def schedule_at(self, time: float, target: str, action: Callable[..., Any], *args: Any) -> SimEvent:
        if time < self.now:
            raise ValueError(f"cannot schedule in the past ({time} < {self.now})")
        ev = SimEvent(time, next(self._seq), target, action, args)
        heapq.heappush(self._heap, ev)
        return ev

    def schedule(self, delay: float, target: str, action: Callable[..., Any], *args: Any) -> SimEvent:
        return self.schedule_at(self.now + delay, target, action, *args)

    def run(self, until: float) -> None:
        while self._heap and self._heap[0].time <= until:
            ev = heapq.heappop(self._heap)
            self.now = ev.time
            self.processed += 1
            ev.action(*ev.args)
        self.now = max(self.now, until)
