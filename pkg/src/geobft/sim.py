"""Deterministic discrete-event network simulator.

Single-threaded virtual-time event loop.  All replica and client actors are
callbacks on this loop; messages between nodes become delivery events delayed
by the region latency matrix plus seeded jitter.  Runs are bit-reproducible
per (scenario, seed): the event queue breaks time ties by insertion sequence
number and all randomness flows from one seeded RNG.

Time unit: simulated milliseconds (float).
"""

from __future__ import annotations

import hashlib
import heapq
import random
from dataclasses import dataclass


DEFAULT_INTRA_LATENCY = 0.2  # one-way, ms


class DeadlockError(Exception):
    """Event queue drained with the run_until condition still unmet."""


@dataclass
class Topology:
    latency: dict  # (region_a, region_b) -> one-way ms; missing pairs symmetric
    intra_latency: float = DEFAULT_INTRA_LATENCY
    jitter_frac: float = 0.02

    def one_way(self, a: str, b: str) -> float:
        if a == b:
            return self.intra_latency
        v = self.latency.get((a, b))
        if v is None:
            v = self.latency.get((b, a))
        if v is None:
            raise KeyError(f"no latency entry for regions {a!r}/{b!r}")
        return v

    def max_one_way(self) -> float:
        return max([self.intra_latency] + list(self.latency.values()))

    def regions(self) -> set:
        out = set()
        for a, b in self.latency:
            out.add(a)
            out.add(b)
        return out


@dataclass
class Node:
    node_id: str
    region: str
    actor: object = None  # needs .on_message(src, data); may expose .pending_waits()
    crashed: bool = False
    behavior: str = ""  # Byzantine behavior script name, "" = correct


@dataclass
class Partition:
    side_a: frozenset  # region names
    start: float
    end: float

    def separates(self, ra: str, rb: str, now: float) -> bool:
        if not (self.start <= now < self.end):
            return False
        return (ra in self.side_a) != (rb in self.side_a)


class Traffic:
    """Byte/message counters bucketed by (scope, tag)."""

    def __init__(self):
        self.bytes: dict[tuple[str, str], int] = {}
        self.msgs: dict[tuple[str, str], int] = {}
        self.dropped_bytes = 0

    def record(self, scope: str, tag: str, size: int) -> None:
        key = (scope, tag)
        self.bytes[key] = self.bytes.get(key, 0) + size
        self.msgs[key] = self.msgs.get(key, 0) + 1

    def total(self, scope: str | None = None) -> int:
        return sum(v for (s, _), v in self.bytes.items() if scope is None or s == scope)

    def by_tag(self, scope: str) -> dict[str, int]:
        out: dict[str, int] = {}
        for (s, tag), v in self.bytes.items():
            if s == scope:
                out[tag] = out.get(tag, 0) + v
        return out


class Timer:
    __slots__ = ("fn", "cancelled")

    def __init__(self, fn):
        self.fn = fn
        self.cancelled = False

    def cancel(self) -> None:
        self.cancelled = True


class Simulator:
    def __init__(self, topology: Topology, seed: int = 0, trace: bool = False):
        self.topology = topology
        self.rng = random.Random(seed)
        self.now = 0.0
        self._queue: list = []
        self._seq = 0
        self.nodes: dict[str, Node] = {}
        self.partitions: list[Partition] = []
        self.traffic = Traffic()
        self.trace_lines: list[str] | None = [] if trace else None
        self._trace_hash = hashlib.sha256()

    # -- nodes ------------------------------------------------------------

    def add_node(self, node_id: str, region: str, actor=None) -> Node:
        if node_id in self.nodes:
            raise ValueError(f"duplicate node {node_id}")
        node = Node(node_id, region, actor)
        self.nodes[node_id] = node
        return node

    def crash(self, node_id: str) -> None:
        self.nodes[node_id].crashed = True

    def add_partition(self, side_a, start: float, end: float) -> None:
        self.partitions.append(Partition(frozenset(side_a), start, end))

    def _partitioned(self, ra: str, rb: str) -> bool:
        return any(p.separates(ra, rb, self.now) for p in self.partitions)

    # -- scheduling -------------------------------------------------------

    def at(self, time: float, fn) -> Timer:
        timer = Timer(fn)
        self._seq += 1
        heapq.heappush(self._queue, (time, self._seq, timer))
        return timer

    def after(self, delay: float, fn) -> Timer:
        return self.at(self.now + delay, fn)

    # -- messaging --------------------------------------------------------

    def send(self, src: str, dst: str, data: bytes, tag: str = "") -> None:
        src_node = self.nodes[src]
        dst_node = self.nodes[dst]
        if src_node.crashed:
            return
        base = self.topology.one_way(src_node.region, dst_node.region)
        jitter = base * self.topology.jitter_frac
        latency = base + self.rng.uniform(-jitter, jitter) if jitter else base
        scope = "intra" if src_node.region == dst_node.region else "wide"
        self.traffic.record(scope, tag, len(data))

        def deliver():
            status = "ok"
            if dst_node.crashed:
                status = "crashed"
            elif self._partitioned(src_node.region, dst_node.region):
                status = "partitioned"
            self._trace(src, dst, tag, len(data), status)
            if status != "ok":
                self.traffic.dropped_bytes += len(data)
                return
            if dst_node.actor is not None:
                dst_node.actor.on_message(src, data)

        self.after(latency, deliver)

    def _trace(self, src, dst, tag, size, status) -> None:
        line = f"{self.now:.4f} {src}->{dst} {tag} {size} {status}"
        self._trace_hash.update(line.encode())
        if self.trace_lines is not None:
            self.trace_lines.append(line)

    def trace_digest(self) -> str:
        return self._trace_hash.hexdigest()

    # -- running ----------------------------------------------------------

    def run_until(self, cond=None, time: float | None = None) -> float:
        """Process events until cond() holds or virtual time is reached."""
        while True:
            if cond is not None and cond():
                return self.now
            if not self._queue:
                if cond is not None:
                    raise DeadlockError(self._deadlock_report())
                if time is not None:
                    self.now = max(self.now, time)
                return self.now
            t, _, timer = self._queue[0]
            if time is not None and t > time:
                self.now = time
                return self.now
            heapq.heappop(self._queue)
            self.now = t
            if not timer.cancelled:
                timer.fn()

    def _deadlock_report(self) -> str:
        waits = []
        for node in self.nodes.values():
            actor = node.actor
            if actor is not None and hasattr(actor, "pending_waits"):
                for w in actor.pending_waits():
                    waits.append(f"{node.node_id}: {w}")
        detail = "; ".join(waits) if waits else "no registered waits"
        return f"event queue empty with condition unmet at t={self.now:.3f} ({detail})"
