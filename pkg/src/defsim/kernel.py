"""Deterministic discrete-event kernel: clock, topology, contested links.

Simulated time is integer milliseconds. One seeded random stream per
simulation, consumed only while events are processed, keeps full runs
byte-reproducible for a fixed (scenario, seed) pair.
"""

from __future__ import annotations

import heapq
import random
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Optional

SimTime = int  # milliseconds since scenario start
NodeId = str


class SimError(Exception):
    """Base class for simulator errors."""


class ParseError(SimError):
    pass


class ValidationError(SimError):
    pass


class TimeInPastError(SimError):
    pass


class NoRouteError(SimError):
    pass


class NodeKind(str, Enum):
    BUS = "BUS"
    PLD = "PLD"
    COMMS = "COMMS"
    VNS = "VNS"
    SENS = "SENS"
    VMS = "VMS"
    BMS = "BMS"
    C2 = "C2"
    MAINT = "MAINT"


class MessageKind(str, Enum):
    AGENT = "agent-protocol"
    C2 = "c2-protocol"
    TRAFFIC = "traffic"
    SCAN_PROBE = "scan-probe"
    EXPLOIT = "exploit"


@dataclass
class LinkProfile:
    """Loss/delay behaviour of one link; jamming wins over everything else."""

    drop_prob: float = 0.0
    base_delay: SimTime = 0
    jitter: SimTime = 0
    jam_windows: list[tuple[SimTime, SimTime]] = field(default_factory=list)
    covert: bool = False

    def validate(self, name: str) -> None:
        if not 0.0 <= self.drop_prob <= 1.0:
            raise ValidationError(f"link {name}: drop_prob {self.drop_prob} outside [0,1]")
        if self.base_delay < 0 or self.jitter < 0:
            raise ValidationError(f"link {name}: negative delay")
        prev_end = None
        for start, end in self.jam_windows:
            if start >= end:
                raise ValidationError(f"link {name}: empty jam window [{start},{end})")
            if prev_end is not None and start < prev_end:
                raise ValidationError(f"link {name}: jam windows overlap or are unsorted")
            prev_end = end

    def jammed_at(self, t: SimTime) -> bool:
        return any(start <= t < end for start, end in self.jam_windows)


@dataclass
class Message:
    src: NodeId
    dst: NodeId
    kind: MessageKind
    payload: bytes
    seq: int
    signature: Optional[str] = None


@dataclass(frozen=True)
class TransmitOutcome:
    delivered_at: Optional[SimTime]  # None when dropped
    drop_reason: Optional[str] = None  # "jammed" | "lossy" | None

    @property
    def dropped(self) -> bool:
        return self.delivered_at is None


class Topology:
    """Validated node/link graph; messages between non-neighbours hop via BUS."""

    def __init__(self, nodes: dict[NodeId, NodeKind], links: dict[tuple[NodeId, NodeId], LinkProfile]):
        self.nodes = nodes
        self.links: dict[tuple[NodeId, NodeId], LinkProfile] = {}
        self.adjacency: dict[NodeId, list[NodeId]] = {n: [] for n in nodes}
        for (a, b), profile in links.items():
            self.links[(a, b)] = profile
            self.links[(b, a)] = profile
            self.adjacency[a].append(b)
            self.adjacency[b].append(a)
        for neighbours in self.adjacency.values():
            neighbours.sort()

    def kind(self, node: NodeId) -> NodeKind:
        return self.nodes[node]

    def nodes_of_kind(self, kind: NodeKind) -> list[NodeId]:
        return sorted(n for n, k in self.nodes.items() if k is kind)

    def route(self, src: NodeId, dst: NodeId) -> list[tuple[NodeId, NodeId]]:
        """Shortest hop sequence from src to dst (BFS, deterministic order)."""
        if src not in self.nodes:
            raise NoRouteError(f"unknown node {src}")
        if dst not in self.nodes:
            raise NoRouteError(f"unknown node {dst}")
        if src == dst:
            return []
        parent: dict[NodeId, NodeId] = {src: src}
        frontier = deque([src])
        while frontier:
            here = frontier.popleft()
            if here == dst:
                break
            for nxt in self.adjacency[here]:
                if nxt not in parent:
                    parent[nxt] = here
                    frontier.append(nxt)
        if dst not in parent:
            raise NoRouteError(f"no route from {src} to {dst}")
        hops: list[tuple[NodeId, NodeId]] = []
        node = dst
        while node != src:
            hops.append((parent[node], node))
            node = parent[node]
        hops.reverse()
        return hops


def load_topology(spec: Any) -> Topology:
    """Parse and validate a topology document (already-decoded JSON)."""
    if not isinstance(spec, dict):
        raise ParseError("topology document must be an object")
    raw_nodes = spec.get("nodes")
    raw_links = spec.get("links", [])
    if not isinstance(raw_nodes, list) or not isinstance(raw_links, list):
        raise ParseError("topology document needs 'nodes' and 'links' lists")
    if not raw_nodes:
        raise ValidationError("topology has no nodes")

    nodes: dict[NodeId, NodeKind] = {}
    for entry in raw_nodes:
        try:
            node_id, kind_name = entry["id"], entry["kind"]
        except (TypeError, KeyError) as exc:
            raise ParseError(f"malformed node entry {entry!r}") from exc
        if node_id in nodes:
            raise ValidationError(f"duplicate node id {node_id}")
        try:
            nodes[node_id] = NodeKind(kind_name)
        except ValueError as exc:
            raise ValidationError(f"node {node_id}: unknown kind {kind_name!r}") from exc

    links: dict[tuple[NodeId, NodeId], LinkProfile] = {}
    for entry in raw_links:
        try:
            a, b = entry["a"], entry["b"]
        except (TypeError, KeyError) as exc:
            raise ParseError(f"malformed link entry {entry!r}") from exc
        for endpoint in (a, b):
            if endpoint not in nodes:
                raise ValidationError(f"link ({a}, {b}): unknown endpoint {endpoint}")
        raw_profile = entry.get("profile", {})
        profile = LinkProfile(
            drop_prob=float(raw_profile.get("drop_prob", 0.0)),
            base_delay=int(raw_profile.get("base_delay", 0)),
            jitter=int(raw_profile.get("jitter", 0)),
            jam_windows=[(int(s), int(e)) for s, e in raw_profile.get("jam_windows", [])],
            covert=bool(raw_profile.get("covert", False)),
        )
        profile.validate(f"({a}, {b})")
        links[(a, b)] = profile

    c2_nodes = [n for n, k in nodes.items() if k is NodeKind.C2]
    if len(c2_nodes) != 1:
        raise ValidationError(f"exactly one C2 node required, found {len(c2_nodes)}")
    topo = Topology(nodes, links)
    if not any(k is NodeKind.BUS for k in nodes.values()):
        raise ValidationError("topology needs at least one BUS node")
    reachable = {next(iter(nodes))}
    frontier = deque(reachable)
    while frontier:
        here = frontier.popleft()
        for nxt in topo.adjacency[here]:
            if nxt not in reachable:
                reachable.add(nxt)
                frontier.append(nxt)
    if reachable != set(nodes):
        missing = sorted(set(nodes) - reachable)
        raise ValidationError(f"topology not connected; unreachable: {missing}")
    return topo


@dataclass(frozen=True)
class TraceRecord:
    t: SimTime
    node: NodeId
    kind: str
    detail: dict

    def as_dict(self) -> dict:
        return {"t": self.t, "node": self.node, "kind": self.kind, "detail": self.detail}


class Simulation:
    """Single-threaded event loop owning the clock, RNG, and trace."""

    def __init__(self, topology: Topology, seed: int, start: SimTime = 0):
        self.topology = topology
        self.rng = random.Random(seed)
        self.clock: SimTime = start
        self.trace: list[TraceRecord] = []
        self._queue: list[tuple[SimTime, int, int, Any, Any]] = []
        self._seq = 0
        self._msg_seq: dict[tuple[NodeId, MessageKind], int] = {}
        self._handlers: dict[NodeId, Callable[[Simulation, Any], None]] = {}

    # -- event scheduling ---------------------------------------------------

    def schedule(self, at: SimTime, target: Optional[NodeId], payload: Any) -> int:
        """Enqueue an event; ties at equal time are processed in insertion order."""
        if at < self.clock:
            raise TimeInPastError(f"schedule at {at} before clock {self.clock}")
        self._seq += 1
        heapq.heappush(self._queue, (at, self._seq, self._seq, target, payload))
        return self._seq

    def call_at(self, at: SimTime, fn: Callable[[], None]) -> int:
        return self.schedule(at, None, fn)

    def register_handler(self, node: NodeId, handler: Callable[[Simulation, Any], None]) -> None:
        self._handlers[node] = handler

    def run_until(self, t: SimTime) -> list[TraceRecord]:
        """Process every event with time <= t; returns records emitted here."""
        if t < self.clock:
            raise TimeInPastError(f"run_until({t}) before clock {self.clock}")
        emitted_from = len(self.trace)
        while self._queue and self._queue[0][0] <= t:
            at, _, _, target, payload = heapq.heappop(self._queue)
            self.clock = at
            if callable(payload):
                payload()
            elif target in self._handlers:
                self._handlers[target](self, payload)
            else:
                self.emit(target or "-", "event", {"payload": payload})
        self.clock = t
        return self.trace[emitted_from:]

    def emit(self, node: NodeId, kind: str, detail: dict) -> TraceRecord:
        record = TraceRecord(self.clock, node, kind, detail)
        self.trace.append(record)
        return record

    # -- messaging ----------------------------------------------------------

    def make_message(self, src: NodeId, dst: NodeId, kind: MessageKind,
                     payload: bytes, signature: Optional[str] = None) -> Message:
        key = (src, kind)
        self._msg_seq[key] = self._msg_seq.get(key, 0) + 1
        if kind in (MessageKind.AGENT, MessageKind.C2) and signature is None:
            raise ValidationError(f"{kind.value} message from {src} must be signed")
        return Message(src, dst, kind, payload, self._msg_seq[key], signature)

    def transmit(self, msg: Message, at: SimTime) -> TransmitOutcome:
        """Walk the route hop by hop; jam windows dominate random loss."""
        hops = self.topology.route(msg.src, msg.dst)
        if not hops:
            return TransmitOutcome(at)
        when = at
        for a, b in hops:
            profile = self.topology.links[(a, b)]
            if profile.jammed_at(when):
                return TransmitOutcome(None, "jammed")
            if profile.drop_prob > 0.0 and self.rng.random() < profile.drop_prob:
                return TransmitOutcome(None, "lossy")
            when += profile.base_delay
            if profile.jitter > 0:
                when += self.rng.randrange(profile.jitter + 1)
        return TransmitOutcome(when)

    def send_message(self, msg: Message, deliver: Callable[[Simulation, Message], None],
                     trace_kind: Optional[str] = None) -> TransmitOutcome:
        """Transmit now and schedule delivery; optionally trace the attempt."""
        outcome = self.transmit(msg, self.clock)
        if trace_kind:
            detail = {"from": msg.src, "to": msg.dst, "msg": msg.kind.value, "seq": msg.seq}
            if outcome.dropped:
                detail["dropped"] = outcome.drop_reason
            else:
                detail["delivers_at"] = outcome.delivered_at
            self.emit(msg.src, trace_kind, detail)
        if not outcome.dropped:
            self.schedule(outcome.delivered_at, None, lambda: deliver(self, msg))
        return outcome
