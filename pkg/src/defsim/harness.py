"""Run orchestration: scenario -> simulation -> trace + metrics.

The trace is newline-delimited JSON, one record per line with keys
{detail, kind, node, t} (alphabetical; compact separators), byte-stable for
a fixed (scenario, seed) so golden-file comparisons are exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .agent import BlueAgent, C2Node, Runtime
from .kernel import Simulation, TraceRecord
from .memory import RewardInputs, RewardWeights, compute_reward
from .red import RedAgent
from .scenario import Scenario, init_node_state, load_scenario
from .substrate import Substrate

SCHEMA_VERSION = 1


@dataclass
class RunMetrics:
    detection_latency: dict[str, int]  # "<t>:<op>" -> ms until first matching IoC
    dwell_time: Optional[int]
    justified_cfh: int
    cry_wolf: int
    honey_events: int
    security_events: int
    false_positive_count: int
    reward: float
    alerts_total: int

    def as_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "detection_latency": self.detection_latency,
            "dwell_time": self.dwell_time,
            "justified_cfh": self.justified_cfh,
            "cry_wolf": self.cry_wolf,
            "honey_events": self.honey_events,
            "security_events": self.security_events,
            "false_positive_count": self.false_positive_count,
            "reward": self.reward,
            "alerts_total": self.alerts_total,
        }


@dataclass
class RunResult:
    scenario: Scenario
    runtime: Runtime
    trace: list[TraceRecord]
    metrics: RunMetrics

    @property
    def lines(self) -> list[str]:
        return trace_lines(self.trace)


def trace_lines(trace: list[TraceRecord]) -> list[str]:
    return [json.dumps(r.as_dict(), sort_keys=True, separators=(",", ":")) for r in trace]


def build_runtime(scenario: Scenario, seed: Optional[int] = None) -> Runtime:
    sim = Simulation(scenario.topology, seed if seed is not None else scenario.seed)
    substrate = Substrate(sim)
    for node, raw in scenario.substrate_init.items():
        init_node_state(substrate.node(node), raw)
    rt = Runtime(sim, substrate, scenario.keys)
    if scenario.c2 is not None:
        rt.c2 = C2Node(rt, scenario.c2.node, scenario.c2.key_id, scenario.c2.behavior)
    for cfg in scenario.agents:
        BlueAgent(rt, cfg)
    if scenario.red is not None:
        rt.red_agents.append(RedAgent(sim, substrate, scenario.red))
    return rt


def run(scenario: Scenario, seed: Optional[int] = None) -> RunResult:
    rt = build_runtime(scenario, seed)
    for _, agent in sorted(rt.agents.items()):
        agent.start()
    for red in rt.red_agents:
        red.start()
    rt.sim.run_until(scenario.duration)
    metrics = compute_metrics(scenario, rt)
    return RunResult(scenario, rt, rt.sim.trace, metrics)


def run_file(path: str | Path, seed: Optional[int] = None) -> RunResult:
    return run(load_scenario(path), seed)


# -- metrics ----------------------------------------------------------------------


def compute_metrics(scenario: Scenario, rt: Runtime) -> RunMetrics:
    trace = rt.sim.trace
    window = scenario.metrics.justified_window

    red_actions = [r for r in trace if r.kind == "red-action"]
    iocs = [r for r in trace if r.kind == "ioc"]

    # Entities a red action touched, with times, for justification checks.
    red_times: dict[str, list[int]] = {}
    for r in red_actions:
        for entity in {r.node, r.detail.get("target")} - {None}:
            red_times.setdefault(entity, []).append(r.t)

    def red_active(entity: Optional[str], t: int) -> bool:
        return any(t - window <= rt_ <= t for rt_ in red_times.get(entity, ()))

    detection: dict[str, int] = {}
    for r in red_actions:
        if r.detail.get("op") == "infiltrate":
            continue
        hit = next((i for i in iocs
                    if i.t >= r.t and i.detail.get("entity") in (r.node, r.detail.get("target"))),
                   None)
        if hit is not None:
            detection[f"{r.t}:{r.detail.get('op')}"] = hit.t - r.t

    infiltration = next((r.t for r in red_actions if r.detail.get("op") == "infiltrate"), None)
    quarantine = next((r.t for r in trace if r.kind == "quarantine"), None)
    dwell = quarantine - infiltration if infiltration is not None and quarantine is not None else None

    cries = [r for r in trace if r.kind in ("alert-sent", "c2-query")]
    justified = sum(1 for r in cries if red_active(r.detail.get("entity"), r.t))
    cry_wolf = len(cries) - justified

    honey = sum(1 for i in iocs if i.detail.get("evidence") == "honey-event")
    security = len(iocs) - honey
    false_pos = sum(1 for i in iocs if not red_active(i.detail.get("entity"), i.t))

    costs: dict[tuple[str, str], float] = {}
    for cfg in scenario.agents:
        for action_id, spec in cfg.repertoire.actions.items():
            costs[(cfg.name, action_id)] = spec.cost
    spent = sum(costs.get((r.detail.get("agent"), r.detail.get("action")), 0.0)
                for r in trace if r.kind == "command" and r.detail.get("status") == "Done")

    a, b, c = scenario.metrics.reward_weights
    reward = compute_reward(
        RewardInputs(honey_events=honey, security_events=security,
                     total_resources=scenario.metrics.total_resources,
                     delta_resources=-spent, justified_cfh=justified, cry_wolf=cry_wolf),
        RewardWeights(a, b, c),
    )

    return RunMetrics(
        detection_latency=detection,
        dwell_time=dwell,
        justified_cfh=justified,
        cry_wolf=cry_wolf,
        honey_events=honey,
        security_events=security,
        false_positive_count=false_pos,
        reward=reward,
        alerts_total=len(cries),
    )


# -- golden-trace comparison -----------------------------------------------------


@dataclass
class Divergence:
    line: int  # 1-based; 0 means a length mismatch past the shorter file
    field: Optional[str]
    got: Optional[str]
    expected: Optional[str]

    def report(self) -> str:
        if self.line == 0:
            return f"trace length differs: got {self.got}, golden {self.expected}"
        where = f"line {self.line}"
        if self.field:
            where += f", field {self.field!r}"
        return f"first divergence at {where}:\n  got:      {self.got}\n  expected: {self.expected}"


def diff_trace(lines: list[str], golden_path: str | Path) -> Optional[Divergence]:
    """Byte-level comparison against a golden trace; None when identical."""
    golden = Path(golden_path).read_text().splitlines()
    for idx, (got, want) in enumerate(zip(lines, golden), start=1):
        if got != want:
            field = None
            try:
                got_obj, want_obj = json.loads(got), json.loads(want)
                field = next((k for k in sorted(set(got_obj) | set(want_obj))
                              if got_obj.get(k) != want_obj.get(k)), None)
            except json.JSONDecodeError:
                pass
            return Divergence(idx, field, got, want)
    if len(lines) != len(golden):
        return Divergence(0, None, str(len(lines)), str(len(golden)))
    return None
