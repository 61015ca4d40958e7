"""Shared bus between the private L2s and the shared L3.

Occupancy is tracked as a calendar of busy cycles, so no two messages ever
hold the bus in the same cycle.  Two ways onto the bus:

* ``send`` queues a message per agent; queued messages are granted
  round-robin by ``step`` one per free cycle window.
* ``reserve`` books the earliest free window at or after a given cycle and
  returns it at once.  The memory hierarchy uses it for critical-path
  request/data messages so their latency is known when the access is made.

A message of ``f`` flits granted at cycle ``s`` holds the bus for cycles
``[s, s + f)`` and is delivered at ``s + hop_latency + f - 1``.
"""

from __future__ import annotations

import enum
import heapq
from collections import deque
from dataclasses import dataclass, field

from .config import NocConfig


class MsgKind(str, enum.Enum):
    REQ = "REQ"
    DATA = "DATA"
    SNOOP = "SNOOP"
    ACK = "ACK"


@dataclass
class BusMessage:
    src: int
    dst: int
    payload_bytes: int
    kind: MsgKind
    flit_size: int = 32
    start: int | None = field(default=None, compare=False)
    delivery: int | None = field(default=None, compare=False)

    @property
    def flits(self) -> int:
        return max(1, -(-self.payload_bytes // self.flit_size))


class Bus:
    def __init__(self, noc: NocConfig | None = None, num_agents: int = 2,
                 record: bool = False):
        self.noc = noc or NocConfig()
        self.num_agents = num_agents
        self.queues = [deque() for _ in range(num_agents)]
        self.pointer = 0
        # busy cycle -> a later cycle to try next (path-compressed skip list)
        self._next: dict[int, int] = {}
        self._floor = 0
        self._in_flight: list[tuple[int, int]] = []
        self._seq = 0
        self.messages = 0
        self.flits = 0
        self.delivered = 0
        self.max_queue_depth = 0
        self.log: list[tuple[int, int, BusMessage]] | None = [] if record else None

    def message(self, src: int, dst: int, payload_bytes: int, kind: MsgKind) -> BusMessage:
        return BusMessage(src, dst, payload_bytes, kind, self.noc.flit_size)

    def _free(self, start: int, flits: int) -> bool:
        return all(c not in self._next for c in range(start, start + flits))

    def _first_free(self, c: int) -> int:
        nxt = self._next
        root = c
        while root in nxt:
            root = nxt[root]
        while c in nxt and nxt[c] != root:
            nxt[c], c = root, nxt[c]
        return root

    def _occupy(self, msg: BusMessage, start: int) -> int:
        f = msg.flits
        for c in range(start, start + f):
            self._next[c] = c + 1
        msg.start = start
        msg.delivery = start + self.noc.hop_latency + f - 1
        self.messages += 1
        self.flits += f
        self._seq += 1
        heapq.heappush(self._in_flight, (msg.delivery, self._seq))
        if self.log is not None:
            self.log.append((start, start + f, msg))
        return msg.delivery

    def reserve(self, msg: BusMessage, cycle: int) -> int:
        """Book the first free window at or after ``cycle``; returns its start."""
        f = msg.flits
        start = self._first_free(cycle)
        while True:
            clash = next((c for c in range(start + 1, start + f) if c in self._next), None)
            if clash is None:
                break
            start = self._first_free(clash + 1)
        self._occupy(msg, start)
        return start

    def send(self, msg: BusMessage, cycle: int) -> int | None:
        """Queue ``msg``; returns the delivery cycle if granted this cycle."""
        q = self.queues[msg.src]
        q.append(msg)
        depth = sum(len(x) for x in self.queues)
        self.max_queue_depth = max(self.max_queue_depth, depth)
        self.step(cycle)
        return msg.delivery

    def _candidate(self) -> int | None:
        n = self.num_agents
        for k in range(n):
            agent = (self.pointer + k) % n
            if self.queues[agent]:
                return agent
        return None

    def arbitrate(self, cycle: int) -> int | None:
        """Round-robin choice among agents with queued messages."""
        agent = self._candidate()
        if agent is not None:
            self.pointer = (agent + 1) % self.num_agents
        return agent

    def step(self, cycle: int) -> int:
        """Deliver due messages and grant at most one queued message."""
        if cycle > self._floor + 4096:
            self._next = {c: n for c, n in self._next.items() if c >= cycle}
            self._floor = cycle
        while self._in_flight and self._in_flight[0][0] <= cycle:
            heapq.heappop(self._in_flight)
            self.delivered += 1
        if cycle in self._next or not any(self.queues):
            return self.delivered
        # the winner waits if a reservation overlaps its window
        agent = self._candidate()
        if self._free(cycle, self.queues[agent][0].flits):
            self.arbitrate(cycle)
            self._occupy(self.queues[agent].popleft(), cycle)
        return self.delivered

    def pending(self) -> int:
        return sum(len(q) for q in self.queues)

    def next_event(self, cycle: int) -> float:
        # deliveries are counted lazily by any later step; only grants matter
        return cycle + 1 if any(self.queues) else float("inf")

    def drain(self, cycle: int) -> int:
        """Step until every queued and in-flight message is delivered."""
        while any(self.queues) or self._in_flight:
            self.step(cycle)
            cycle += 1
        return cycle

    def stats(self) -> dict[str, int]:
        return {"messages": self.messages, "flits": self.flits,
                "max_queue_depth": self.max_queue_depth}


def bus_send(bus: Bus, msg: BusMessage, cycle: int) -> int | None:
    return bus.send(msg, cycle)


def bus_arbitrate(bus: Bus, cycle: int) -> int | None:
    return bus.arbitrate(cycle)
