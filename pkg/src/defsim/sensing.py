"""Percept collection, sanitation, and world-state identification.

Evidence flows percept -> IoC -> compromise-level escalation. Escalation is
monotone per entity until an explicit recovery action resets it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Optional

from .kernel import NodeId, SimTime


class PerceptSource(str, Enum):
    SELF = "self"
    SYSTEM = "system"
    ENVIRONMENT = "environment"


class PerceptKind(str, Enum):
    SCAN_PROBE = "scan-probe"
    CONNECTION = "connection"
    INTEGRITY_FINDING = "integrity-finding"
    LOG_EVENT = "log-event"
    METRIC_SAMPLE = "metric-sample"
    HONEY_EVENT = "honey-event"
    FUNCTIONAL_ANOMALY = "functional-anomaly"
    MESSAGE_RECEIVED = "message-received"


# Attributes a percept of each kind must carry to survive sanitation.
MANDATORY_ATTRIBUTES: dict[PerceptKind, tuple[str, ...]] = {
    PerceptKind.SCAN_PROBE: ("src", "dst", "port"),
    PerceptKind.CONNECTION: ("src", "dst"),
    PerceptKind.INTEGRITY_FINDING: ("node", "path"),
    PerceptKind.LOG_EVENT: ("node",),
    PerceptKind.METRIC_SAMPLE: ("node",),
    PerceptKind.HONEY_EVENT: ("node", "accessor"),
    PerceptKind.FUNCTIONAL_ANOMALY: ("node",),
    PerceptKind.MESSAGE_RECEIVED: ("src",),
}

_SOURCE_RANK = {PerceptSource.SELF: 0, PerceptSource.SYSTEM: 1, PerceptSource.ENVIRONMENT: 2}


@dataclass(frozen=True)
class Percept:
    t: SimTime
    source: PerceptSource
    kind: PerceptKind
    attributes: dict

    @property
    def dedupe_key(self) -> str:
        # Pure function of (kind, attributes); timestamps do not participate.
        return self.kind.value + "|" + json.dumps(self.attributes, sort_keys=True, default=str)


@dataclass(frozen=True)
class IoC:
    """One unit of compromise evidence against an entity.

    Connection evidence escalates both endpoints: the initiating entity by
    `delta` and the other endpoint by `peer_delta`.
    """

    entity: str
    evidence: str
    delta: float
    t: SimTime
    peer: Optional[str] = None
    peer_delta: float = 0.0


class Level(int, Enum):
    CLEAN = 0
    POTENTIAL = 1
    LIKELY = 2
    CONFIRMED = 3


LEVEL_THRESHOLDS = ((Level.CONFIRMED, 0.85), (Level.LIKELY, 0.55), (Level.POTENTIAL, 0.25))

# Default escalation weight per evidence kind; scenario-overridable.
DEFAULT_DELTAS = {
    "anomalous-connection": 0.30,
    "anomalous-connection-peer": 0.25,
    "integrity-violation": 0.40,
    "honey-event": 0.50,
    "functional-anomaly": 0.60,
    "metric-out-of-bounds": 0.15,
}


@dataclass
class CompromiseLevel:
    level: Level = Level.CLEAN
    confidence: float = 0.0


@dataclass
class EntityState:
    compromise: CompromiseLevel = field(default_factory=CompromiseLevel)
    services: tuple[int, ...] = ()
    last_metrics: Optional[dict] = None


@dataclass
class WorldState:
    t: SimTime
    entities: dict[str, EntityState]
    self_entity: str
    self_integrity_ok: bool = True

    @classmethod
    def initial(cls, nodes: Iterable[str], self_entity: str, t: SimTime = 0) -> "WorldState":
        entities = {n: EntityState() for n in nodes}
        entities.setdefault(self_entity, EntityState())
        return cls(t=t, entities=entities, self_entity=self_entity)

    def level(self, entity: str) -> Level:
        return self.entities[entity].compromise.level

    def confidence(self, entity: str) -> float:
        return self.entities[entity].compromise.confidence


@dataclass
class Whitelists:
    """Baselines of normal behaviour: flows, file hashes, metric bounds."""

    flows: set[tuple[str, str, Optional[int]]] = field(default_factory=set)
    file_hashes: dict[str, dict[str, int]] = field(default_factory=dict)  # node -> path -> hash
    metric_bounds: dict[str, dict[str, float]] = field(default_factory=dict)  # metric -> {max}
    process_whitelist: set[str] = field(default_factory=set)  # image names
    process_blacklist: set[str] = field(default_factory=set)

    def flow_allowed(self, src: str, dst: str, port: Optional[int]) -> bool:
        return ((src, dst, port) in self.flows or (src, dst, None) in self.flows)


@dataclass
class SanitationStats:
    dropped: int = 0
    deduped: int = 0


def sanitize(raw: Iterable[Percept], stats: Optional[SanitationStats] = None) -> list[Percept]:
    """Normalize, deduplicate, and order one batch of percepts.

    Output is sorted by (t, dedupe_key) so any permutation of the input batch
    yields the identical output. Idempotent. Malformed percepts are dropped
    and counted, never fatal.
    """
    stats = stats if stats is not None else SanitationStats()
    best: dict[str, Percept] = {}
    for percept in raw:
        attrs = {str(k).lower(): _canonical(v) for k, v in percept.attributes.items()}
        mandatory = MANDATORY_ATTRIBUTES.get(percept.kind, ())
        if any(key not in attrs for key in mandatory):
            stats.dropped += 1
            continue
        clean = replace(percept, attributes=attrs)
        key = clean.dedupe_key
        kept = best.get(key)
        if kept is None:
            best[key] = clean
        else:
            stats.deduped += 1
            if (clean.t, _SOURCE_RANK[clean.source]) < (kept.t, _SOURCE_RANK[kept.source]):
                best[key] = clean
    return sorted(best.values(), key=lambda p: (p.t, p.dedupe_key))


def _canonical(value):
    if isinstance(value, str):
        return value.strip()
    return value


def identify_environment(percepts: Iterable[Percept], default: str = "expected") -> str:
    """Environment tag from declared markers; the last marker seen wins."""
    tag = default
    for percept in percepts:
        marker = percept.attributes.get("environment_marker")
        if marker in ("expected", "virtualized", "debugger"):
            tag = marker
    return tag


def classify_friend_foe(entity: str, whitelists: Whitelists, tagged_foes: set[str]) -> str:
    if entity in tagged_foes or entity in whitelists.process_blacklist:
        return "foe"
    if entity in whitelists.process_whitelist:
        return "friend"
    return "unknown"


def detect_anomaly(percepts: Iterable[Percept], whitelists: Whitelists,
                   deltas: Optional[dict[str, float]] = None) -> list[IoC]:
    """Rule-based anomaly identification over a sanitized batch."""
    weights = dict(DEFAULT_DELTAS)
    if deltas:
        weights.update(deltas)
    iocs: list[IoC] = []
    for percept in percepts:
        attrs = percept.attributes
        if percept.kind in (PerceptKind.CONNECTION, PerceptKind.SCAN_PROBE):
            src, dst = attrs["src"], attrs["dst"]
            port = attrs.get("port")
            if not whitelists.flow_allowed(src, dst, port):
                iocs.append(IoC(entity=src, evidence="anomalous-connection",
                                delta=weights["anomalous-connection"], t=percept.t,
                                peer=dst, peer_delta=weights["anomalous-connection-peer"]))
        elif percept.kind is PerceptKind.INTEGRITY_FINDING:
            if not attrs.get("change_authorized", False):
                iocs.append(IoC(entity=attrs["node"], evidence="integrity-violation",
                                delta=weights["integrity-violation"], t=percept.t))
        elif percept.kind is PerceptKind.HONEY_EVENT:
            iocs.append(IoC(entity=attrs.get("accessor_node", attrs["node"]),
                            evidence="honey-event", delta=weights["honey-event"], t=percept.t))
        elif percept.kind is PerceptKind.FUNCTIONAL_ANOMALY:
            iocs.append(IoC(entity=attrs["node"], evidence="functional-anomaly",
                            delta=weights["functional-anomaly"], t=percept.t))
        elif percept.kind is PerceptKind.METRIC_SAMPLE:
            for metric, bounds in whitelists.metric_bounds.items():
                value = attrs.get(metric)
                if value is None:
                    continue
                if value > bounds.get("max", float("inf")) or value < bounds.get("min", 0.0):
                    iocs.append(IoC(entity=attrs["node"], evidence="metric-out-of-bounds",
                                    delta=weights["metric-out-of-bounds"], t=percept.t))
    return iocs


def level_for_confidence(confidence: float) -> Level:
    for level, threshold in LEVEL_THRESHOLDS:
        if confidence >= threshold:
            return level
    return Level.CLEAN


def update_world_state(state: WorldState, iocs: Iterable[IoC], t: Optional[SimTime] = None) -> WorldState:
    """Fold IoCs into per-entity confidence; levels follow fixed thresholds."""
    increments: dict[str, float] = {}
    latest = state.t
    for ioc in iocs:
        increments[ioc.entity] = increments.get(ioc.entity, 0.0) + ioc.delta
        if ioc.peer is not None and ioc.peer_delta > 0.0:
            increments[ioc.peer] = increments.get(ioc.peer, 0.0) + ioc.peer_delta
        latest = max(latest, ioc.t)
    entities = dict(state.entities)
    for entity, bump in increments.items():
        current = entities.get(entity, EntityState())
        confidence = min(1.0, current.compromise.confidence + bump)
        level = max(current.compromise.level, level_for_confidence(confidence), key=int)
        entities[entity] = replace(current, compromise=CompromiseLevel(level, confidence))
    return WorldState(t=t if t is not None else latest, entities=entities,
                      self_entity=state.self_entity, self_integrity_ok=state.self_integrity_ok)


def reset_entity(state: WorldState, entity: str) -> WorldState:
    """Explicit recovery: the one sanctioned way a compromise level drops."""
    entities = dict(state.entities)
    entities[entity] = replace(entities.get(entity, EntityState()), compromise=CompromiseLevel())
    return WorldState(t=state.t, entities=entities, self_entity=state.self_entity,
                      self_integrity_ok=state.self_integrity_ok)
