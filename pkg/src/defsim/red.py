"""Scripted adversary: staged kill chain plus explicit timeline scripting.

Red supplies the ground truth for detection metrics: every red action lands
in the trace as a red-action record (invisible to blue agents, which only
ever see percepts). Red decisions read scan results and red-local state,
never blue internals.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from .kernel import NodeId, NodeKind, SimTime, Simulation
from .substrate import ProcessOwner, ProtectedFileError, Substrate, hash64


class RedPhase(str, Enum):
    DORMANT = "Dormant"
    RECON = "Recon"
    EXPLOIT = "Exploit"
    LATERAL = "Lateral"
    EVADE = "Evade"
    NEUTRALIZED = "Neutralized"


@dataclass
class RedScript:
    red_id: str = "Red-35"
    infection_node: NodeId = ""
    infection_time: SimTime = 0
    target_kinds: list[NodeKind] = field(default_factory=list)
    scan_interval: SimTime = 1000
    exploit_success_prob: float = 1.0
    abort_on_lockdown: bool = True
    vector_node: Optional[NodeId] = None
    wait_for_diagnostics: bool = False
    beacon_interval: Optional[SimTime] = None
    timeline: Optional[list[dict]] = None  # explicit (t, op, args) script

    def __post_init__(self):
        if self.infection_time < 0:
            raise ValueError("infection_time must be >= 0")
        if self.scan_interval <= 0:
            raise ValueError("scan_interval must be > 0")


@dataclass
class RedObservations:
    """Everything a red decision may depend on; no blue state in here."""

    t: SimTime
    scan_result: Optional[list[int]] = None
    last_write_ok: Optional[bool] = None
    target_locked: bool = False
    diagnostics_seen: bool = False
    targets_remaining: bool = True


@dataclass(frozen=True)
class RedIntent:
    op: str  # scan | exploit | rescan | none
    target_kind: Optional[NodeKind] = None


def red_step(phase: RedPhase, obs: RedObservations, script: RedScript) -> tuple[RedPhase, list[RedIntent]]:
    """Kill-chain transition function. Neutralized is absorbing."""
    if phase is RedPhase.NEUTRALIZED:
        return phase, []
    if phase is RedPhase.DORMANT:
        if obs.t >= script.infection_time:
            return RedPhase.RECON, []
        return phase, []
    if phase is RedPhase.RECON:
        if obs.scan_result:
            return RedPhase.EXPLOIT, []
        return phase, [RedIntent("scan")]
    if phase is RedPhase.EXPLOIT:
        if obs.last_write_ok:
            return RedPhase.LATERAL, []
        if obs.target_locked and script.abort_on_lockdown:
            return RedPhase.EVADE, []
        if script.wait_for_diagnostics and not obs.diagnostics_seen:
            return phase, [RedIntent("none")]
        return phase, [RedIntent("exploit")]
    if phase is RedPhase.LATERAL:
        if obs.targets_remaining:
            return RedPhase.RECON, []
        return RedPhase.EVADE, []
    # Evade: keep probing for further lateral movement.
    return phase, [RedIntent("rescan")]


class RedAgent:
    """Drives a RedScript inside the event loop."""

    def __init__(self, sim: Simulation, substrate: Substrate, script: RedScript):
        self.sim = sim
        self.substrate = substrate
        self.script = script
        self.phase = RedPhase.DORMANT
        self.host: Optional[NodeId] = None
        self.pids: dict[NodeId, int] = {}
        self.contained = False
        self._target_idx = 0
        self._located: Optional[NodeId] = None
        self._last_scan: Optional[list[int]] = None
        self._last_write_ok: Optional[bool] = None
        self._target_locked = False

    def start(self) -> None:
        if self.script.timeline is not None:
            self.sim.call_at(self.script.infection_time, self._infiltrate)
            for step in self.script.timeline:
                self.sim.call_at(int(step["t"]), lambda s=step: self._timeline_op(s))
        else:
            self.sim.call_at(self.script.infection_time, self._infiltrate)

    # -- lifecycle -------------------------------------------------------------

    def _infiltrate(self) -> None:
        if self.phase is RedPhase.NEUTRALIZED:
            return
        self.host = self.script.infection_node
        record = self.substrate.spawn_process(self.host, f"{self.script.red_id}.bin", ProcessOwner.RED)
        self.pids[self.host] = record.pid
        detail = {"red": self.script.red_id, "op": "infiltrate", "target": self.host}
        if self.script.vector_node:
            detail["vector"] = self.script.vector_node
        self.sim.emit(self.host, "red-action", detail)
        self._set_phase(RedPhase.RECON)
        if self.script.timeline is None:
            self.sim.call_at(self.sim.clock + self.script.scan_interval, self._step)
        if self.script.beacon_interval:
            self.sim.call_at(self.sim.clock + self.script.beacon_interval, self._beacon)

    def neutralize(self) -> RedPhase:
        """Blue-side quarantine/overwrite; removes red processes everywhere."""
        if self.phase in (RedPhase.DORMANT, RedPhase.NEUTRALIZED):
            raise LookupError(f"{self.script.red_id} not present")
        for node in list(self.pids):
            self.substrate.kill_processes(node, ProcessOwner.RED)
        self.pids.clear()
        self._set_phase(RedPhase.NEUTRALIZED)
        return self.phase

    def _set_phase(self, phase: RedPhase) -> None:
        if phase is not self.phase:
            self.phase = phase
            self.sim.emit(self.host or self.script.infection_node, "red-phase",
                          {"red": self.script.red_id, "phase": phase.value})

    # -- kill-chain driver -------------------------------------------------------

    def _observations(self) -> RedObservations:
        diagnostics = bool(self.host) and self.substrate.log_contains(self.host, "diagnostics")
        return RedObservations(
            t=self.sim.clock,
            scan_result=self._last_scan,
            last_write_ok=self._last_write_ok,
            target_locked=self._target_locked,
            diagnostics_seen=diagnostics,
            targets_remaining=self._target_idx < len(self.script.target_kinds),
        )

    def _step(self) -> None:
        if self.phase is RedPhase.NEUTRALIZED:
            return
        phase, intents = red_step(self.phase, self._observations(), self.script)
        if phase is not self.phase:
            self._set_phase(phase)
            # Phase changes consume the step; re-evaluate on the same beat.
            phase2, intents = red_step(self.phase, self._observations(), self.script)
            if phase2 is not self.phase:
                self._set_phase(phase2)
        for intent in intents:
            self._perform(intent)
        self.sim.call_at(self.sim.clock + self.script.scan_interval, self._step)

    def _perform(self, intent: RedIntent) -> None:
        if intent.op == "none":
            return
        if intent.op in ("scan", "rescan"):
            target = self._pick_target(rescan=intent.op == "rescan")
            if target is None:
                return
            ports = self.substrate.scan_ports(target, self.host)
            self.sim.emit(self.host, "red-action",
                          {"red": self.script.red_id, "op": "scan", "target": target,
                           "ports": ports})
            if intent.op == "scan":
                self._last_scan = ports
                if ports:
                    self._located = target
        elif intent.op == "exploit":
            self._exploit(self._located)

    def _pick_target(self, rescan: bool = False) -> Optional[NodeId]:
        kinds = self.script.target_kinds
        if not kinds:
            return None
        idx = self._target_idx if not rescan else (self._target_idx % len(kinds))
        if idx >= len(kinds):
            idx = len(kinds) - 1
        nodes = self.sim.topology.nodes_of_kind(kinds[idx])
        nodes = [n for n in nodes if n != self.host]
        return nodes[0] if nodes else None

    def _exploit(self, target: Optional[NodeId]) -> None:
        if target is None:
            return
        path = f"{target.lower()}/config"
        self.substrate.connect(self.host, target, port=self._last_scan[0] if self._last_scan else None,
                               accessor_pid=self.pids.get(self.host, 0), flow_kind="exploit")
        succeeded = self.sim.rng.random() < self.script.exploit_success_prob
        if succeeded:
            try:
                self.substrate.write_file(target, path, hash64(f"{self.script.red_id}:{target}"),
                                          authorized=False, actor=self.script.red_id)
            except ProtectedFileError:
                succeeded = False
                self._target_locked = True
        self.sim.emit(self.host, "red-action",
                      {"red": self.script.red_id, "op": "exploit-write", "target": target,
                       "path": path, "ok": succeeded})
        self._last_write_ok = succeeded
        if succeeded:
            record = self.substrate.spawn_process(target, f"{self.script.red_id}.bin", ProcessOwner.RED)
            self.pids[target] = record.pid
            self._target_idx += 1
            self._last_scan = None
            self._last_write_ok = None  # consumed by the Lateral transition
            self._set_phase(RedPhase.LATERAL)
            self._target_locked = False

    # -- timeline driver -----------------------------------------------------------

    def _timeline_op(self, step: dict) -> None:
        if self.phase in (RedPhase.DORMANT, RedPhase.NEUTRALIZED):
            return
        op = step["op"]
        pid = self.pids.get(self.host, 0)
        detail = {"red": self.script.red_id, "op": op}
        if op == "scan":
            ports = self.substrate.scan_ports(step["target"], self.host)
            detail.update(target=step["target"], ports=ports)
        elif op == "connect":
            self.substrate.connect(step.get("src", self.host), step["target"],
                                   step.get("port"), pid, flow_kind="exploit")
            detail.update(target=step["target"])
        elif op == "write":
            ok = True
            try:
                self.substrate.write_file(step["target"], step["path"],
                                          hash64(step.get("content", self.script.red_id)),
                                          authorized=False, actor=self.script.red_id)
            except ProtectedFileError:
                ok = False
            detail.update(target=step["target"], path=step["path"], ok=ok)
        elif op == "read":
            self.substrate.read_file(step["target"], step["path"], pid, self.host)
            detail.update(target=step["target"], path=step["path"])
        elif op == "degrade":
            self.substrate.emit_functional_anomaly(step["target"], step.get("symptom", "degraded-response"))
            detail.update(target=step["target"])
        else:
            raise ValueError(f"unknown red op {op!r}")
        self.sim.emit(self.host, "red-action", detail)

    def _beacon(self) -> None:
        if self.phase in (RedPhase.DORMANT, RedPhase.NEUTRALIZED):
            return
        from .sensing import PerceptKind, PerceptSource  # local import avoids cycle at module load

        if self.contained:
            # Redirected traffic lands in the honeypot, fully observed.
            self.substrate.queue_percept(self.host, PerceptKind.HONEY_EVENT,
                                         {"node": self.host, "decoy": "containment",
                                          "kind": "redirected-c2",
                                          "accessor": self.pids.get(self.host, 0),
                                          "accessor_node": self.host})
        else:
            self.substrate.queue_percept(self.host, PerceptKind.CONNECTION,
                                         {"src": self.host, "dst": "enemy-c2", "flow": "beacon"},
                                         source=PerceptSource.ENVIRONMENT)
        self.sim.emit(self.host, "red-action",
                      {"red": self.script.red_id, "op": "beacon", "contained": self.contained})
        if self.script.beacon_interval:
            self.sim.call_at(self.sim.clock + self.script.beacon_interval, self._beacon)
