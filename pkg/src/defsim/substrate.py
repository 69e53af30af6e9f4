"""Abstract per-node operating environment: files, ports, processes, logs.

Red actions corrupt this state; blue actions inspect and repair it. Every
operation is atomic: validation happens before any mutation, so a failed
call leaves the node untouched. Sensing is strictly on-demand -- percepts
accumulate in a per-node queue and are only handed out by collect().
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from .kernel import NodeId, NoRouteError, SimTime, Simulation
from .sensing import Percept, PerceptKind, PerceptSource

MISSING_FILE_MSG = "The file cannot be deleted. The requested file does not exist."
PROTECTED_FILE_MSG = "The file cannot be deleted. The requested file is protected."

DEFAULT_DECOY_CAPACITY = 8


class SubstrateError(Exception):
    pass


class ProtectedFileError(SubstrateError):
    pass


class PortBusyError(SubstrateError):
    pass


class PortNotOpenError(SubstrateError):
    pass


class CapacityExceededError(SubstrateError):
    pass


class NotPresentError(SubstrateError):
    pass


def hash64(content: str) -> int:
    """Stable 64-bit digest standing in for file contents."""
    return int.from_bytes(hashlib.blake2b(content.encode(), digest_size=8).digest(), "big")


class ProcessOwner(str, Enum):
    SYSTEM = "system"
    BLUE = "blue-agent"
    RED = "red-agent"
    UNKNOWN = "unknown"


@dataclass
class FileEntry:
    path: str
    content_hash: int
    protected: bool = False
    last_change: SimTime = 0
    change_authorized: bool = True
    supervised: bool = False  # unauthorized changes are logged by a watcher


@dataclass
class PortEntry:
    service: str
    authenticity: str = "real"  # "real" | "fake"; scans cannot tell them apart
    open: bool = True


@dataclass
class ProcessRecord:
    pid: int
    image: str
    owner: ProcessOwner
    started: SimTime

    def visible_owner(self, classified: bool = False) -> ProcessOwner:
        # Red ownership is hidden from blue sensing until classification.
        if self.owner is ProcessOwner.RED and not classified:
            return ProcessOwner.UNKNOWN
        return self.owner


@dataclass
class Metrics:
    cpu_load: float = 0.1
    mem_used: float = 100.0
    mem_total: float = 1000.0


class DecoyKind(str, Enum):
    FAKE_FILE = "fake-file"
    FAKE_PASSWORD_FILE = "fake-password-file"
    FAKE_SERVICE = "fake-service"
    HONEYPOT_NODE = "honeypot-node"


@dataclass
class DecoyHandle:
    decoy_id: str
    kind: DecoyKind
    node: NodeId
    path: Optional[str] = None
    port: Optional[int] = None


@dataclass
class IntegrityFinding:
    path: str
    reason: str  # "hash-mismatch" | "blacklist-match" | "unexpected-path"
    change_authorized: bool


@dataclass
class NodeState:
    node: NodeId
    files: dict[str, FileEntry] = field(default_factory=dict)
    ports: dict[int, PortEntry] = field(default_factory=dict)
    processes: dict[int, ProcessRecord] = field(default_factory=dict)
    log: list[tuple[SimTime, str]] = field(default_factory=list)
    metrics: Metrics = field(default_factory=Metrics)
    decoys: dict[str, DecoyHandle] = field(default_factory=dict)
    lockdown: bool = False
    maintenance_windows: list[tuple[SimTime, SimTime]] = field(default_factory=list)
    decoy_capacity: int = DEFAULT_DECOY_CAPACITY
    environment_marker: Optional[str] = None
    percept_queue: list[Percept] = field(default_factory=list)
    percept_reads: int = 0  # audit counter for the on-demand sensing rule
    _next_pid: int = 1000

    def in_maintenance(self, t: SimTime) -> bool:
        return any(s <= t < e for s, e in self.maintenance_windows)

    def fresh_pid(self) -> int:
        self._next_pid += 1
        return self._next_pid

    def snapshot(self) -> tuple:
        """Comparable view of the mutable state, for atomicity checks."""
        return (
            tuple(sorted((p, f.content_hash, f.protected, f.last_change, f.change_authorized)
                         for p, f in self.files.items())),
            tuple(sorted((n, e.service, e.authenticity, e.open) for n, e in self.ports.items())),
            tuple(sorted((pid, r.image, r.owner.value) for pid, r in self.processes.items())),
            len(self.log),
            tuple(sorted(self.decoys)),
            self.lockdown,
        )


class Substrate:
    """All node environments of one simulation, mutated only through events."""

    def __init__(self, sim: Simulation):
        self.sim = sim
        self.nodes: dict[NodeId, NodeState] = {n: NodeState(node=n) for n in sim.topology.nodes}

    def node(self, node: NodeId) -> NodeState:
        if node not in self.nodes:
            raise NotPresentError(f"unknown node {node}")
        return self.nodes[node]

    # -- percept plumbing ----------------------------------------------------

    def queue_percept(self, node: NodeId, kind: PerceptKind, attributes: dict,
                      source: PerceptSource = PerceptSource.SYSTEM) -> None:
        state = self.node(node)
        state.percept_queue.append(Percept(self.sim.clock, source, kind, attributes))

    def collect(self, node: NodeId) -> list[Percept]:
        """Drain queued percepts plus one self health sample (on-demand only)."""
        state = self.node(node)
        state.percept_reads += 1
        raw = state.percept_queue
        state.percept_queue = []
        raw.append(Percept(self.sim.clock, PerceptSource.SELF, PerceptKind.METRIC_SAMPLE,
                           {"node": node, "cpu_load": state.metrics.cpu_load,
                            "mem_used": state.metrics.mem_used}))
        return raw

    # -- files ----------------------------------------------------------------

    def write_file(self, node: NodeId, path: str, new_hash: int, authorized: bool,
                   actor: str = "system") -> FileEntry:
        state = self.node(node)
        existing = state.files.get(path)
        if existing is not None and existing.protected and not authorized:
            raise ProtectedFileError(f"{path} on {node} is protected")
        if state.lockdown and not authorized:
            raise ProtectedFileError(f"{node} is in lockdown; unauthorized writes refused")
        change_authorized = authorized or state.in_maintenance(self.sim.clock)
        entry = FileEntry(
            path=path,
            content_hash=new_hash,
            protected=existing.protected if existing else False,
            last_change=self.sim.clock,
            change_authorized=change_authorized,
            supervised=existing.supervised if existing else False,
        )
        state.files[path] = entry
        self.append_log(node, f"write {path} by {actor}")
        if entry.supervised and not change_authorized:
            self.queue_percept(node, PerceptKind.INTEGRITY_FINDING,
                               {"node": node, "path": path, "change_authorized": False,
                                "reason": "hash-mismatch"})
        return entry

    def delete_file(self, node: NodeId, path: str, privileged: bool = False) -> str:
        state = self.node(node)
        entry = state.files.get(path)
        if entry is None:
            return MISSING_FILE_MSG
        if entry.protected and not privileged:
            return PROTECTED_FILE_MSG
        del state.files[path]
        self.append_log(node, f"delete {path}")
        return "ok"

    def check_integrity(self, node: NodeId, whitelist: dict[str, int],
                        blacklist: Optional[set[int]] = None) -> list[IntegrityFinding]:
        state = self.node(node)
        blacklist = blacklist or set()
        findings: list[IntegrityFinding] = []
        for path, entry in sorted(state.files.items()):
            if entry.content_hash in blacklist:
                findings.append(IntegrityFinding(path, "blacklist-match", entry.change_authorized))
            elif path in whitelist:
                if entry.content_hash != whitelist[path]:
                    findings.append(IntegrityFinding(path, "hash-mismatch", entry.change_authorized))
            else:
                findings.append(IntegrityFinding(path, "unexpected-path", entry.change_authorized))
        return findings

    def read_file(self, node: NodeId, path: str, accessor_pid: int,
                  accessor_node: Optional[NodeId] = None) -> Optional[int]:
        """Content read; touching decoy files raises honey events."""
        state = self.node(node)
        entry = state.files.get(path)
        for decoy in state.decoys.values():
            if decoy.path == path:
                self._honey_event(node, decoy, accessor_pid, accessor_node or node)
        if entry is None:
            return None
        return entry.content_hash

    # -- ports and connections -------------------------------------------------

    def scan_ports(self, node: NodeId, scanner: NodeId) -> list[int]:
        """Open ports, real and fake alike; probing is observable at both ends."""
        self.sim.topology.route(scanner, node)  # raises NoRouteError when unreachable
        state = self.node(node)
        open_ports = sorted(p for p, e in state.ports.items() if e.open)
        for port in open_ports:
            attrs = {"src": scanner, "dst": node, "port": port}
            self.queue_percept(node, PerceptKind.SCAN_PROBE, dict(attrs))
            if scanner in self.nodes and scanner != node:
                self.queue_percept(scanner, PerceptKind.SCAN_PROBE, dict(attrs),
                                   source=PerceptSource.ENVIRONMENT)
        return open_ports

    def remap_port(self, node: NodeId, from_port: int, to_port: int,
                   decoy: bool = False) -> dict[int, PortEntry]:
        state = self.node(node)
        entry = state.ports.get(from_port)
        if entry is None or not entry.open:
            raise PortNotOpenError(f"port {from_port} on {node} is not open")
        if to_port in state.ports and state.ports[to_port].open:
            raise PortBusyError(f"port {to_port} on {node} is busy")
        state.ports[to_port] = PortEntry(entry.service, entry.authenticity, True)
        del state.ports[from_port]
        if decoy:
            handle = self._register_decoy(state, DecoyKind.FAKE_SERVICE, port=from_port)
            state.ports[from_port] = PortEntry(f"decoy:{handle.decoy_id}", "fake", True)
        self.append_log(node, f"remap {from_port}->{to_port}")
        return state.ports

    def connect(self, src: NodeId, dst: NodeId, port: Optional[int], accessor_pid: int,
                flow_kind: str = "traffic") -> None:
        """Record a network flow; both endpoints can observe it."""
        self.sim.topology.route(src, dst)
        attrs = {"src": src, "dst": dst, "flow": flow_kind}
        if port is not None:
            attrs["port"] = port
        self.queue_percept(src, PerceptKind.CONNECTION, dict(attrs),
                           source=PerceptSource.ENVIRONMENT)
        if dst != src:
            self.queue_percept(dst, PerceptKind.CONNECTION, dict(attrs))
        dst_state = self.node(dst)
        if port is not None:
            entry = dst_state.ports.get(port)
            if entry is not None and entry.authenticity == "fake":
                for decoy in dst_state.decoys.values():
                    if decoy.port == port or decoy.kind is DecoyKind.FAKE_SERVICE:
                        self._honey_event(dst, decoy, accessor_pid, src)
                        break
        for decoy in dst_state.decoys.values():
            if decoy.kind is DecoyKind.HONEYPOT_NODE:
                self._honey_event(dst, decoy, accessor_pid, src)

    # -- decoys -----------------------------------------------------------------

    def deploy_decoy(self, node: NodeId, kind: DecoyKind, path: Optional[str] = None,
                     port: Optional[int] = None) -> DecoyHandle:
        state = self.node(node)
        if len(state.decoys) >= state.decoy_capacity:
            raise CapacityExceededError(f"{node} decoy capacity {state.decoy_capacity} reached")
        if kind in (DecoyKind.FAKE_FILE, DecoyKind.FAKE_PASSWORD_FILE):
            path = path or (f"decoy/passwords-{len(state.decoys)}"
                            if kind is DecoyKind.FAKE_PASSWORD_FILE
                            else f"decoy/file-{len(state.decoys)}")
        handle = self._register_decoy(state, kind, path=path, port=port)
        if handle.path is not None:
            state.files[handle.path] = FileEntry(handle.path, hash64(f"decoy:{handle.decoy_id}"),
                                                 last_change=self.sim.clock)
        if kind is DecoyKind.FAKE_SERVICE:
            chosen = port if port is not None else (max(state.ports, default=9000) + 1)
            if chosen in state.ports and state.ports[chosen].open:
                raise PortBusyError(f"port {chosen} on {node} is busy")
            state.ports[chosen] = PortEntry(f"decoy:{handle.decoy_id}", "fake", True)
            handle.port = chosen
        self.append_log(node, f"decoy {kind.value} deployed")
        return handle

    def _register_decoy(self, state: NodeState, kind: DecoyKind,
                        path: Optional[str] = None, port: Optional[int] = None) -> DecoyHandle:
        decoy_id = f"{state.node}-d{len(state.decoys)}"
        handle = DecoyHandle(decoy_id, kind, state.node, path=path, port=port)
        state.decoys[decoy_id] = handle
        return handle

    def _honey_event(self, node: NodeId, decoy: DecoyHandle, accessor_pid: int,
                     accessor_node: NodeId) -> None:
        self.queue_percept(node, PerceptKind.HONEY_EVENT,
                           {"node": node, "decoy": decoy.decoy_id, "kind": decoy.kind.value,
                            "accessor": accessor_pid, "accessor_node": accessor_node})

    # -- processes, logs, metrics -----------------------------------------------

    def spawn_process(self, node: NodeId, image: str, owner: ProcessOwner) -> ProcessRecord:
        state = self.node(node)
        record = ProcessRecord(state.fresh_pid(), image, owner, self.sim.clock)
        state.processes[record.pid] = record
        self.append_log(node, f"spawn {image}")
        return record

    def kill_processes(self, node: NodeId, owner: ProcessOwner) -> list[int]:
        state = self.node(node)
        doomed = [pid for pid, rec in state.processes.items() if rec.owner is owner]
        for pid in doomed:
            del state.processes[pid]
        if doomed:
            self.append_log(node, f"killed {len(doomed)} {owner.value} process(es)")
        return doomed

    def append_log(self, node: NodeId, text: str, as_percept: bool = False) -> None:
        state = self.node(node)
        state.log.append((self.sim.clock, text))
        if as_percept:
            self.queue_percept(node, PerceptKind.LOG_EVENT, {"node": node, "entry": text})

    def log_contains(self, node: NodeId, needle: str) -> bool:
        return any(needle in text for _, text in self.node(node).log)

    def record_metrics(self, node: NodeId) -> None:
        state = self.node(node)
        self.queue_percept(node, PerceptKind.METRIC_SAMPLE,
                           {"node": node, "cpu_load": state.metrics.cpu_load,
                            "mem_used": state.metrics.mem_used})

    def emit_functional_anomaly(self, node: NodeId, symptom: str) -> None:
        self.queue_percept(node, PerceptKind.FUNCTIONAL_ANOMALY,
                           {"node": node, "symptom": symptom},
                           source=PerceptSource.ENVIRONMENT)
