"""Agent data services and learning: history, world dynamics, episodes.

Experience is chunked into episodes of (time, action, percept) steps closed
with a scalar value V; plan retrieval is exact-prefix case matching over the
stored episodes. World dynamics are count-based transition patterns with
n/(n+k) confidence.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Hashable, Iterable, Optional, Sequence

from .kernel import SimTime

SMOOTHING_K = 5
DEFAULT_EPISODE_LENGTH = 8


class LearningMode(str, Enum):
    OFF = "off"          # preloaded databases only
    PASSIVE = "passive"  # record, never influence decisions
    ACTIVE = "active"    # case matches feed action selection


def _state_key(state: Hashable) -> str:
    if isinstance(state, frozenset):
        return "|".join(sorted(state))
    return str(state)


@dataclass
class TransitionPattern:
    state_key: str
    action: str
    successors: dict[str, int] = field(default_factory=dict)
    scope: str = "agent-event"  # which quadrant of world/agent x event the data came from

    @property
    def total(self) -> int:
        return sum(self.successors.values())

    @property
    def confidence(self) -> float:
        n = self.total
        return n / (n + SMOOTHING_K)


class TransitionTable:
    """World dynamics: per (state, action) successor counts."""

    def __init__(self):
        self.patterns: dict[tuple[str, str], TransitionPattern] = {}

    def record_transition(self, prev: Hashable, action: str, nxt: Hashable,
                          scope: str = "agent-event") -> TransitionPattern:
        key = (_state_key(prev), action)
        pattern = self.patterns.get(key)
        if pattern is None:
            pattern = TransitionPattern(key[0], action, scope=scope)
            self.patterns[key] = pattern
        nxt_key = _state_key(nxt)
        pattern.successors[nxt_key] = pattern.successors.get(nxt_key, 0) + 1
        return pattern

    def confidence(self, state: Hashable, action: str) -> float:
        pattern = self.patterns.get((_state_key(state), action))
        return pattern.confidence if pattern else 0.0

    def successor_distribution(self, state: Hashable, action: str) -> dict[str, float]:
        """Add-1 smoothed frequencies over the successors seen for this key."""
        pattern = self.patterns.get((_state_key(state), action))
        if pattern is None or not pattern.successors:
            return {}
        denom = pattern.total + len(pattern.successors)
        return {s: (c + 1) / denom for s, c in sorted(pattern.successors.items())}

    def to_json(self) -> str:
        payload = [
            {"state": p.state_key, "action": p.action, "successors": p.successors, "scope": p.scope}
            for p in self.patterns.values()
        ]
        return json.dumps(payload, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "TransitionTable":
        table = cls()
        for entry in json.loads(text):
            pattern = TransitionPattern(entry["state"], entry["action"],
                                        dict(entry["successors"]), entry.get("scope", "agent-event"))
            table.patterns[(pattern.state_key, pattern.action)] = pattern
        return table


@dataclass(frozen=True)
class EpisodeStep:
    t: SimTime
    action: Optional[str]   # None encodes the NULL action
    percept: Optional[str]  # percept tag, None when nothing was perceived


@dataclass
class Episode:
    steps: tuple[EpisodeStep, ...]
    value: float

    def __post_init__(self):
        if not self.steps:
            raise ValueError("episode must have at least one step")
        if not -1.0 <= self.value <= 1.0:
            raise ValueError("episode value must lie in [-1, 1]")

    @property
    def actions(self) -> tuple[str, ...]:
        return tuple(s.action for s in self.steps if s.action is not None)


class ExperienceStore:
    """Append-only collection of episodes with case-based retrieval."""

    def __init__(self, chunk_length: int = DEFAULT_EPISODE_LENGTH):
        self.episodes: list[Episode] = []
        self.chunk_length = chunk_length

    def record_episode(self, steps: Sequence[EpisodeStep | tuple], value: float) -> Episode:
        if not steps:
            raise ValueError("empty episode")
        normalized = tuple(s if isinstance(s, EpisodeStep) else EpisodeStep(*s) for s in steps)
        episode = Episode(normalized, value)
        self.episodes.append(episode)
        return episode

    def match_episodes(self, recent_actions: Sequence[str], min_value: float) -> Optional[tuple[str, ...]]:
        """Best-valued stored episode whose actions start with recent_actions.

        Returns the remaining actions of that episode as a plan suffix, or
        None when nothing clears the value threshold. Ties prefer the most
        recently stored episode.
        """
        if not recent_actions:
            raise ValueError("recent_actions must be non-empty")
        prefix = tuple(recent_actions)
        best: Optional[tuple[float, int, tuple[str, ...]]] = None
        for idx, episode in enumerate(self.episodes):
            actions = episode.actions
            if len(actions) <= len(prefix) or actions[:len(prefix)] != prefix:
                continue
            if episode.value < min_value:
                continue
            candidate = (episode.value, idx, actions[len(prefix):])
            if best is None or (candidate[0], candidate[1]) > (best[0], best[1]):
                best = candidate
        return best[2] if best else None

    def predict_plan_value(self, recent_actions: Sequence[str],
                           proposed_plan: Sequence[str]) -> Optional[float]:
        """Value of the episode exactly matching recent ++ proposed, if any."""
        target = tuple(recent_actions) + tuple(proposed_plan)
        values = [e.value for e in self.episodes if e.actions == target]
        return max(values) if values else None

    def to_json(self) -> str:
        payload = [
            {"steps": [[s.t, s.action, s.percept] for s in e.steps], "value": e.value}
            for e in self.episodes
        ]
        return json.dumps(payload, sort_keys=True)

    @classmethod
    def from_json(cls, text: str, chunk_length: int = DEFAULT_EPISODE_LENGTH) -> "ExperienceStore":
        store = cls(chunk_length)
        for entry in json.loads(text):
            steps = tuple(EpisodeStep(int(t), a, p) for t, a, p in entry["steps"])
            store.episodes.append(Episode(steps, float(entry["value"])))
        return store


class EpisodeRecorder:
    """Accumulates (t, action, percept) steps; closes chunks at chunk_length."""

    def __init__(self, store: ExperienceStore, severity_table: dict[str, float]):
        self.store = store
        self.severity_table = severity_table
        self.pending: list[EpisodeStep] = []
        self.window_tags: list[str] = []
        self.unknown_tags = 0

    def add(self, t: SimTime, action: Optional[str], percept: Optional[str]) -> None:
        self.pending.append(EpisodeStep(t, action, percept))
        if percept is not None:
            self.window_tags.append(percept)
        if len(self.pending) >= self.store.chunk_length:
            self.close()

    def close(self) -> Optional[Episode]:
        if not self.pending:
            return None
        value, unknown = assess_value(self.window_tags, self.severity_table)
        self.unknown_tags += unknown
        episode = self.store.record_episode(self.pending, value)
        self.pending = []
        self.window_tags = []
        return episode


def assess_value(percept_tags: Iterable[str], severity_table: dict[str, float]) -> tuple[float, int]:
    """State assessor: V = -min(1, sum of severities); returns (V, unknown count)."""
    total = 0.0
    unknown = 0
    for tag in percept_tags:
        if tag in severity_table:
            total += severity_table[tag]
        else:
            unknown += 1
    return -min(1.0, total), unknown


@dataclass
class RewardInputs:
    honey_events: int = 0
    security_events: int = 0
    total_resources: float = 1.0
    delta_resources: float = 0.0
    justified_cfh: int = 0
    cry_wolf: int = 0

    def __post_init__(self):
        if self.total_resources <= 0:
            raise ValueError("total_resources must be > 0")
        for name in ("honey_events", "security_events", "justified_cfh", "cry_wolf"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


@dataclass
class RewardWeights:
    a: float = 1.0
    b: float = 1.0
    c: float = 1.0


def compute_reward(inputs: RewardInputs, weights: RewardWeights) -> float:
    """Deception reward: honeypot hits, resource drift, and alert quality.

    Zero denominators fall back to 1 so the term degrades to the bare count.
    """
    def den(x: float) -> float:
        return x if x > 0 else 1.0

    return (weights.a * inputs.honey_events / den(inputs.security_events)
            + weights.b * inputs.delta_resources / inputs.total_resources
            + weights.c * inputs.justified_cfh / den(inputs.cry_wolf))


class HistoryDB:
    """Append-only current-state-and-history service."""

    def __init__(self):
        self.flows: list[dict] = []
        self.log_stash: list[tuple[SimTime, str, str]] = []
        self.metric_samples: list[dict] = []
        self.snapshots: list[dict] = []  # {"t", "state", "iocs"} in order

    def record_flow(self, record: dict) -> None:
        self.flows.append(record)

    def stash_log(self, t: SimTime, node: str, entry: str) -> None:
        self.log_stash.append((t, node, entry))

    def record_metrics(self, sample: dict) -> None:
        self.metric_samples.append(sample)

    def record_snapshot(self, t: SimTime, state: dict, iocs: list[dict]) -> None:
        self.snapshots.append({"t": t, "state": state, "iocs": iocs})
