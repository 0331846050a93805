"""Discrete-event simulation kernel with a virtual clock.

Events execute in (fire_time, priority, insertion order) total order. Handlers
may post new events; the clock never moves backward. Simulated compute delays
are configuration constants, which makes traces a deterministic function of
the initial events and seeds.
"""

from __future__ import annotations

import csv
import heapq
from dataclasses import dataclass, field
from typing import Callable, Optional

# Fixed tie-break order at equal timestamps.
PRIO_CONTROL = 0
PRIO_OCP = 1
PRIO_TRACKER = 2
PRIO_LOCALIZER = 3
PRIO_FRAME = 4


@dataclass(order=True)
class Event:
    fire_time: float
    priority: int
    seq: int
    name: str = field(compare=False)
    handler: Callable = field(compare=False)
    detail: str = field(compare=False, default="")


class Scheduler:
    """Single-threaded virtual-clock event loop."""

    def __init__(self):
        self._heap = []
        self._seq = 0
        self.clock = 0.0
        self.trace = []  # (time, priority, task, detail) rows

    def post(self, fire_time: float, priority: int, name: str, handler: Callable, detail: str = ""):
        if fire_time < self.clock:
            raise ValueError(f"event {name!r} at {fire_time} is before clock {self.clock}")
        heapq.heappush(self._heap, Event(fire_time, priority, self._seq, name, handler, detail))
        self._seq += 1

    def post_periodic(self, start: float, period: float, priority: int, name: str,
                      handler: Callable, end: Optional[float] = None):
        """Schedule handler(time) every `period` seconds from `start` until `end`."""

        def tick(t=start):
            handler(t)
            nxt = t + period
            if end is None or nxt <= end + 1e-12:
                self.post(nxt, priority, name, lambda nxt=nxt: tick(nxt))

        self.post(start, priority, name, tick)

    def run_until(self, t_end: float):
        """Execute all events with fire_time <= t_end; returns the trace."""
        if t_end < self.clock:
            raise ValueError("t_end is before the current clock")
        while self._heap and self._heap[0].fire_time <= t_end:
            ev = heapq.heappop(self._heap)
            self.clock = ev.fire_time
            self.trace.append((ev.fire_time, ev.priority, ev.name, ev.detail))
            ev.handler()
        self.clock = t_end
        return self.trace

    def write_trace(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["time", "priority", "task", "detail"])
            for t, p, name, detail in self.trace:
                w.writerow([repr(t), p, name, detail])
