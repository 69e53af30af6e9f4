"""Scenario documents: parsing, cross-reference validation, object building.

A scenario JSON bundles topology, per-node substrate state, blue agent
configurations, the red script, link profiles, seed, and duration. All
cross-references are checked up front; errors carry the offending path.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from .agent import AgentConfig, CollabConfig, LearningConfig
from .decision import (ActionCategory, ActionSpec, GoalProfile, Repertoire,
                       availability_goal, integrity_goal, progress_goal)
from .kernel import NodeKind, ParseError, SimTime, Topology, ValidationError, load_topology
from .memory import LearningMode
from .red import RedScript
from .sensing import Whitelists
from .substrate import FileEntry, NodeState, PortEntry, ProcessOwner, ProcessRecord, hash64


class ScenarioError(Exception):
    """Reference or schema problem; message names the offending field path."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass
class MetricsConfig:
    total_resources: float = 100.0
    reward_weights: tuple[float, float, float] = (1.0, 1.0, 1.0)
    justified_window: SimTime = 60_000


@dataclass
class C2Config:
    node: str
    key_id: str
    behavior: dict = field(default_factory=dict)


@dataclass
class Scenario:
    name: str
    seed: int
    duration: SimTime
    topology: Topology
    keys: dict[str, str]
    substrate_init: dict[str, dict]
    agents: list[AgentConfig]
    red: Optional[RedScript]
    c2: Optional[C2Config]
    metrics: MetricsConfig
    raw: dict


def _hash_value(value: Any) -> int:
    return value if isinstance(value, int) else hash64(str(value))


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    if not path.exists():
        raise ScenarioError(str(path), "file does not exist")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return parse_scenario(raw)


def parse_scenario(raw: dict) -> Scenario:
    if not isinstance(raw, dict):
        raise ParseError("scenario document must be an object")
    if "seed" not in raw:
        raise ScenarioError("seed", "scenario requires a seed")
    if "topology" not in raw:
        raise ScenarioError("topology", "scenario requires a topology")
    try:
        topology = load_topology(raw["topology"])
    except (ParseError, ValidationError) as exc:
        raise ScenarioError("topology", str(exc)) from exc

    keys = {str(k): str(v) for k, v in raw.get("keys", {}).items()}

    substrate_init = raw.get("substrate", {})
    for node in substrate_init:
        if node not in topology.nodes:
            raise ScenarioError(f"substrate.{node}", "unknown node")

    agents = []
    for i, entry in enumerate(raw.get("agents", [])):
        agents.append(_parse_agent(entry, topology, keys, f"agents[{i}]"))
    names = [a.name for a in agents]
    if len(names) != len(set(names)):
        raise ScenarioError("agents", "duplicate agent names")

    red = _parse_red(raw.get("red"), topology) if raw.get("red") else None

    c2 = None
    if raw.get("c2"):
        c2node = raw["c2"].get("node")
        if c2node not in topology.nodes:
            raise ScenarioError("c2.node", f"unknown node {c2node}")
        key_id = raw["c2"].get("key_id", "c2")
        if key_id not in keys:
            raise ScenarioError("c2.key_id", f"unknown key {key_id}")
        c2 = C2Config(c2node, key_id, raw["c2"].get("behavior", {}))

    m = raw.get("metrics", {})
    weights = m.get("reward_weights", {})
    metrics = MetricsConfig(
        total_resources=float(m.get("total_resources", 100.0)),
        reward_weights=(float(weights.get("a", 1.0)), float(weights.get("b", 1.0)),
                        float(weights.get("c", 1.0))),
        justified_window=int(m.get("justified_window", 60_000)),
    )

    return Scenario(
        name=str(raw.get("name", "scenario")),
        seed=int(raw["seed"]),
        duration=int(raw.get("duration", 60_000)),
        topology=topology,
        keys=keys,
        substrate_init=substrate_init,
        agents=agents,
        red=red,
        c2=c2,
        metrics=metrics,
        raw=raw,
    )


def _parse_agent(entry: dict, topology: Topology, keys: dict[str, str], where: str) -> AgentConfig:
    for required in ("name", "node", "key_id"):
        if required not in entry:
            raise ScenarioError(f"{where}.{required}", "missing field")
    node = entry["node"]
    if node not in topology.nodes:
        raise ScenarioError(f"{where}.node", f"unknown node {node}")
    if entry["key_id"] not in keys:
        raise ScenarioError(f"{where}.key_id", f"unknown key {entry['key_id']}")
    monitors = entry.get("monitors", [node])
    for m in monitors:
        if m not in topology.nodes:
            raise ScenarioError(f"{where}.monitors", f"unknown node {m}")

    whitelists = _parse_whitelists(entry.get("whitelists", {}), topology, where)
    repertoire = _parse_repertoire(entry.get("repertoire", []), where)
    milestones = list(entry.get("goals", {}).get("milestones", []))
    goals = _parse_goals(entry.get("goals"), milestones, len(topology.nodes), where)

    collab_raw = entry.get("collab", {})
    collab = CollabConfig(
        c2_wait=int(collab_raw.get("c2_wait", 2780)),
        peer_wait=int(collab_raw.get("peer_wait", 7000)),
        negotiation_wait=int(collab_raw.get("negotiation_wait", 2000)),
        discoverable=bool(collab_raw.get("discoverable", True)),
        reply_delay=(int(collab_raw["reply_delay"])
                     if collab_raw.get("reply_delay") is not None else None),
        key_replaced_at=(int(collab_raw["key_replaced_at"])
                         if collab_raw.get("key_replaced_at") is not None else None),
    )

    learning_raw = entry.get("learning", {})
    try:
        mode = LearningMode(learning_raw.get("mode", "off"))
    except ValueError as exc:
        raise ScenarioError(f"{where}.learning.mode", str(exc)) from exc
    learning = LearningConfig(
        mode=mode,
        severity_table={str(k): float(v)
                        for k, v in learning_raw.get("severity_table", {}).items()},
        episode_length=int(learning_raw.get("episode_length", 8)),
        match_threshold=float(learning_raw.get("match_threshold", 0.75)),
    )

    caps = entry.get("capacities", [100.0, 100.0, 100.0])
    return AgentConfig(
        name=str(entry["name"]),
        node=node,
        key_id=str(entry["key_id"]),
        monitors=list(monitors),
        period=int(entry.get("period", 1000)),
        start_at=int(entry.get("start_at", 0)),
        passive=bool(entry.get("passive", False)),
        depth=int(entry.get("depth", 3)),
        branch=int(entry.get("branch", 3)),
        plan_budget=int(entry.get("plan_budget", 200)),
        goals=goals,
        milestones=milestones,
        repertoire=repertoire,
        whitelists=whitelists,
        collab=collab,
        learning=learning,
        environment_default=str(entry.get("environment_default", "expected")),
        services=list(entry.get("services", [])),
        capacities=(float(caps[0]), float(caps[1]), float(caps[2])),
    )


def _parse_whitelists(raw: dict, topology: Topology, where: str) -> Whitelists:
    flows = set()
    for flow in raw.get("flows", []):
        src, dst = flow[0], flow[1]
        port = flow[2] if len(flow) > 2 and flow[2] is not None else None
        flows.add((src, dst, port))
    file_hashes: dict[str, dict[str, int]] = {}
    for node, paths in raw.get("file_hashes", {}).items():
        if node not in topology.nodes:
            raise ScenarioError(f"{where}.whitelists.file_hashes.{node}", "unknown node")
        file_hashes[node] = {p: _hash_value(h) for p, h in paths.items()}
    return Whitelists(
        flows=flows,
        file_hashes=file_hashes,
        metric_bounds={k: dict(v) for k, v in raw.get("metric_bounds", {}).items()},
        process_whitelist=set(raw.get("process_whitelist", [])),
        process_blacklist=set(raw.get("process_blacklist", [])),
    )


def _parse_repertoire(entries: list[dict], where: str) -> Repertoire:
    actions = []
    for i, a in enumerate(entries):
        if "id" not in a:
            raise ScenarioError(f"{where}.repertoire[{i}]", "action needs an id")
        try:
            category = ActionCategory(a.get("category", "admin"))
        except ValueError as exc:
            raise ScenarioError(f"{where}.repertoire[{i}].category", str(exc)) from exc
        actions.append(ActionSpec(
            action_id=str(a["id"]),
            category=category,
            requires=frozenset(a.get("requires", [])),
            forbids=frozenset(a.get("forbids", [])),
            adds=frozenset(a.get("adds", [])),
            removes=frozenset(a.get("removes", [])),
            op=a.get("op"),
            cost=float(a.get("cost", 0.0)),
            risk=float(a.get("risk", 0.0)),
            duration=int(a.get("duration", 0)),
        ))
    return Repertoire(actions)


def _parse_goals(raw: Optional[dict], milestones: list[str], entity_count: int,
                 where: str) -> Optional[GoalProfile]:
    if raw is None:
        return None
    builders = {
        "integrity": lambda: integrity_goal(entity_count),
        "availability": lambda: availability_goal(entity_count),
        "progress": lambda: progress_goal(milestones),
    }
    functions = {}
    for name, weight in raw.get("functions", {"integrity": 1.0}).items():
        if name not in builders:
            raise ScenarioError(f"{where}.goals.functions.{name}", "unknown goal function")
        functions[name] = (float(weight), builders[name]())
    weights = raw.get("weights", {})
    return GoalProfile(
        goal_functions=functions,
        w_efficacy=float(weights.get("efficacy", 1.0)),
        w_rapidity=float(weights.get("rapidity", 0.0)),
        w_risk=float(weights.get("risk", 0.0)),
        min_score=float(raw.get("min_score", 0.0)),
        urgency=bool(raw.get("urgency", False)),
        time_scale=int(raw.get("time_scale", 60_000)),
    )


def _parse_red(raw: dict, topology: Topology) -> RedScript:
    node = raw.get("infection_node")
    if node not in topology.nodes:
        raise ScenarioError("red.infection_node", f"unknown node {node}")
    kinds = []
    for k in raw.get("target_kinds", []):
        try:
            kinds.append(NodeKind(k))
        except ValueError as exc:
            raise ScenarioError("red.target_kinds", str(exc)) from exc
    vector = raw.get("vector_node")
    if vector is not None and vector not in topology.nodes:
        raise ScenarioError("red.vector_node", f"unknown node {vector}")
    timeline = raw.get("timeline")
    if timeline is not None:
        for i, step in enumerate(timeline):
            if "t" not in step or "op" not in step:
                raise ScenarioError(f"red.timeline[{i}]", "needs t and op")
            target = step.get("target")
            if target is not None and target not in topology.nodes:
                raise ScenarioError(f"red.timeline[{i}].target", f"unknown node {target}")
    try:
        return RedScript(
            red_id=str(raw.get("red_id", "Red-35")),
            infection_node=node,
            infection_time=int(raw.get("infection_time", 0)),
            target_kinds=kinds,
            scan_interval=int(raw.get("scan_interval", 1000)),
            exploit_success_prob=float(raw.get("exploit_success_prob", 1.0)),
            abort_on_lockdown=bool(raw.get("abort_on_lockdown", True)),
            vector_node=vector,
            wait_for_diagnostics=bool(raw.get("wait_for_diagnostics", False)),
            beacon_interval=(int(raw["beacon_interval"])
                             if raw.get("beacon_interval") is not None else None),
            timeline=timeline,
        )
    except ValueError as exc:
        raise ScenarioError("red", str(exc)) from exc


def init_node_state(state: NodeState, raw: dict) -> None:
    """Apply declared substrate state for one node."""
    for f in raw.get("files", []):
        content_hash = f["hash"] if "hash" in f else hash64(str(f.get("content", f["path"])))
        state.files[f["path"]] = FileEntry(
            path=f["path"],
            content_hash=content_hash,
            protected=bool(f.get("protected", False)),
            change_authorized=True,
            supervised=bool(f.get("supervised", False)),
        )
    for p in raw.get("ports", []):
        state.ports[int(p["port"])] = PortEntry(
            service=str(p.get("service", f"svc-{p['port']}")),
            authenticity=str(p.get("authenticity", "real")),
            open=bool(p.get("open", True)),
        )
    for proc in raw.get("processes", []):
        record = ProcessRecord(state.fresh_pid(), str(proc["image"]),
                               ProcessOwner(proc.get("owner", "system")), 0)
        state.processes[record.pid] = record
    metrics = raw.get("metrics", {})
    state.metrics.cpu_load = float(metrics.get("cpu_load", state.metrics.cpu_load))
    state.metrics.mem_used = float(metrics.get("mem_used", state.metrics.mem_used))
    state.metrics.mem_total = float(metrics.get("mem_total", state.metrics.mem_total))
    state.lockdown = bool(raw.get("lockdown", False))
    state.maintenance_windows = [(int(s), int(e)) for s, e in raw.get("maintenance_windows", [])]
    state.decoy_capacity = int(raw.get("decoy_capacity", state.decoy_capacity))
    state.environment_marker = raw.get("environment_marker")
