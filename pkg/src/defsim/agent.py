"""Blue agent assembly: sense -> identify -> plan -> select -> execute,
with collaboration fallbacks (C2 query, peer contact, local decision) and
episode/transition learning wired through the event kernel.

Scenario JSON fully parameterizes each agent: monitored nodes, decision
cycle period, goal profile, response repertoire, whitelists, collaboration
timeouts, and learning mode.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from . import collab as collab_proto
from .collab import (AgentIdentity, CollabState, NegotiationRequest, ResponseKind,
                     ServiceRecord, respond_to_negotiation)
from .decision import (AbstractState, Adjustment, GoalProfile, Plan, Repertoire, Status,
                       StepStatus, abstract_state, adjust, integrity_goal, plan_stream,
                       select)
from .kernel import Message, MessageKind, NodeId, NoRouteError, SimTime, Simulation
from .memory import EpisodeRecorder, ExperienceStore, HistoryDB, LearningMode, TransitionTable
from .red import RedAgent
from .sensing import (IoC, Level, Percept, PerceptKind, SanitationStats, Whitelists,
                      WorldState, detect_anomaly, identify_environment, reset_entity,
                      sanitize, update_world_state)
from .substrate import DecoyKind, Substrate, SubstrateError


@dataclass
class CollabConfig:
    c2_wait: SimTime = 2780
    peer_wait: SimTime = 7000
    negotiation_wait: SimTime = 2000
    discoverable: bool = True
    reply_delay: Optional[SimTime] = None   # scripted auto-reply to peer alerts
    key_replaced_at: Optional[SimTime] = None  # compromise script: key swap time


@dataclass
class LearningConfig:
    mode: LearningMode = LearningMode.OFF
    severity_table: dict[str, float] = field(default_factory=dict)
    episode_length: int = 8
    match_threshold: float = 0.75
    recent_window: int = 2


@dataclass
class AgentConfig:
    name: str
    node: NodeId
    key_id: str
    monitors: list[NodeId] = field(default_factory=list)
    period: SimTime = 1000
    start_at: SimTime = 0
    passive: bool = False
    depth: int = 3
    branch: int = 3
    plan_budget: int = 200
    goals: Optional[GoalProfile] = None
    milestones: list[str] = field(default_factory=list)
    repertoire: Repertoire = field(default_factory=Repertoire)
    whitelists: Whitelists = field(default_factory=Whitelists)
    collab: CollabConfig = field(default_factory=CollabConfig)
    learning: LearningConfig = field(default_factory=LearningConfig)
    environment_default: str = "expected"
    services: list[str] = field(default_factory=list)
    capacities: tuple[float, float, float] = (100.0, 100.0, 100.0)


@dataclass
class AgentStats:
    cycles: int = 0
    selections: int = 0
    executed: int = 0
    retries: int = 0
    replans: int = 0
    collab_triggers: int = 0
    dropped_messages: int = 0


class Runtime:
    """Shared wiring for one scenario run."""

    def __init__(self, sim: Simulation, substrate: Substrate, keys: dict[str, str]):
        self.sim = sim
        self.substrate = substrate
        self.keys = keys
        self.agents: dict[str, "BlueAgent"] = {}
        self.by_node: dict[NodeId, object] = {}
        self.red_agents: list[RedAgent] = []
        self.c2: Optional["C2Node"] = None

    def register(self, agent: "BlueAgent") -> None:
        self.agents[agent.cfg.name] = agent
        self.by_node[agent.cfg.node] = agent

    def deliver(self, sim: Simulation, msg: Message) -> None:
        receiver = self.by_node.get(msg.dst)
        if receiver is not None:
            receiver.on_message(msg)

    def identities(self) -> list[AgentIdentity]:
        return [agent.identity for _, agent in sorted(self.agents.items())]

    def reds_on(self, node: NodeId) -> list[RedAgent]:
        return [r for r in self.red_agents if node in r.pids]


class C2Node:
    """Scripted command node: acknowledges, orders, or stays silent."""

    def __init__(self, rt: Runtime, node: NodeId, key_id: str, behavior: Optional[dict] = None):
        self.rt = rt
        self.node = node
        self.key_id = key_id
        self.behavior = behavior or {}
        self.alerts_seen = 0
        self.queries_seen: list[dict] = []
        rt.by_node[node] = self

    @property
    def key(self) -> str:
        return self.rt.keys[self.key_id]

    def on_message(self, msg: Message) -> None:
        sim = self.rt.sim
        try:
            msg_type, body = collab_proto.decode_envelope(msg.payload)
        except collab_proto.CollabError:
            return
        sender = self.rt.agents.get(body.get("from", ""))
        if sender is None or not collab_proto.verify(self.rt.keys.get(sender.cfg.key_id, ""),
                                                     msg.payload, msg.signature):
            return
        sim.emit(self.node, "msg-received", {"from": body.get("from"), "type": msg_type})
        if msg_type == "alert":
            self.alerts_seen += 1
            threshold = self.behavior.get("status_query_after_alerts")
            if threshold and self.alerts_seen == threshold:
                for name in sorted(self.rt.agents):
                    self._send(name, "status-query", {"reason": "alert-frequency"})
        elif msg_type == "c2-query":
            self.queries_seen.append(body)
            reply = self.behavior.get("replies", {}).get(body.get("question"))
            if reply is not None:
                delay = int(self.behavior.get("reply_delay", 0))
                sim.call_at(sim.clock + delay,
                            lambda: self._send(body["from"], "c2-order",
                                               {"order": reply, "question": body.get("question")}))

    def _send(self, agent_name: str, msg_type: str, body: dict) -> None:
        agent = self.rt.agents.get(agent_name)
        if agent is None:
            return
        body = dict(body, **{"from": "C2"})
        payload = collab_proto.encode_envelope(msg_type, body)
        msg = self.rt.sim.make_message(self.node, agent.cfg.node, MessageKind.C2,
                                       payload, collab_proto.sign(self.key, payload))
        self.rt.sim.send_message(msg, self.rt.deliver, trace_kind="message")


class BlueAgent:
    """One autonomous defender bound to a node."""

    def __init__(self, rt: Runtime, cfg: AgentConfig):
        self.rt = rt
        self.cfg = cfg
        self.identity = AgentIdentity(cfg.name, cfg.key_id, cfg.collab.discoverable)
        self.collab = CollabState(self.identity, rt.keys)
        self.world = WorldState.initial(rt.sim.topology.nodes, cfg.node)
        self.flags: set[str] = set()
        self.tagged_foes: set[str] = set()
        self.env_tag = cfg.environment_default
        self.stats = AgentStats()
        self.sanitation = SanitationStats()
        self.disabled = False
        self.signing_key_id = cfg.key_id
        self._compromised_key: Optional[str] = None
        self.history = HistoryDB()
        self.dynamics = TransitionTable()
        self.experience = ExperienceStore(cfg.learning.episode_length)
        self.recorder = EpisodeRecorder(self.experience, cfg.learning.severity_table)
        self.recent_actions: list[str] = []
        self.peer_alerts: dict[str, SimTime] = {}
        self.alerts_sent: int = 0
        self._plan: Optional[Plan] = None
        self._plan_statuses: list[StepStatus] = []
        self._plan_step = 0
        self._busy_until: SimTime = 0
        self._c2_epoch = 0
        self._c2_replied = False
        self._peer_replied = False
        self._negotiation_epochs: dict[str, int] = {}
        if not (cfg.monitors):
            cfg.monitors = [cfg.node]
        rt.register(self)

    # -- lifecycle -------------------------------------------------------------

    def start(self) -> None:
        self.rt.sim.call_at(self.cfg.start_at, self._startup)
        if self.cfg.collab.key_replaced_at is not None:
            self.rt.sim.call_at(self.cfg.collab.key_replaced_at, self._replace_key)

    def _startup(self) -> None:
        self.rt.sim.emit(self.cfg.node, "startup", {"agent": self.cfg.name})
        self._cycle()

    def _replace_key(self) -> None:
        # Compromise script: signatures stop verifying against the roster key.
        self._compromised_key = f"red-key-{self.cfg.name}"

    @property
    def signing_key(self) -> str:
        return self._compromised_key or self.rt.keys[self.cfg.key_id]

    # -- decision cycle -----------------------------------------------------------

    def _cycle(self) -> None:
        if self.disabled:
            return
        sim = self.rt.sim
        self.stats.cycles += 1
        percepts = self._sense()
        iocs = self._identify(percepts)
        self._learn(percepts)
        if not self.cfg.passive and self._plan is None:
            self._decide()
        self.history.record_snapshot(sim.clock, self._world_snapshot(),
                                     [ioc.__dict__ for ioc in iocs])
        sim.call_at(sim.clock + self.cfg.period, self._cycle)

    def _sense(self) -> list[Percept]:
        raw: list[Percept] = []
        for node in self.cfg.monitors:
            raw.extend(self.rt.substrate.collect(node))
        return sanitize(raw, self.sanitation)

    def _identify(self, percepts: list[Percept]) -> list[IoC]:
        sim = self.rt.sim
        new_tag = identify_environment(percepts, self.env_tag)
        if new_tag != self.env_tag:
            self.env_tag = new_tag
            sim.emit(self.cfg.node, "env-tag", {"agent": self.cfg.name, "tag": new_tag})
        for percept in percepts:
            if percept.kind is PerceptKind.HONEY_EVENT:
                self.tagged_foes.add(str(percept.attributes.get("accessor")))
            if (percept.kind is PerceptKind.INTEGRITY_FINDING
                    and not percept.attributes.get("change_authorized", False)
                    and percept.attributes.get("node") in self.cfg.monitors):
                self.flags.add("file_tampered")
        iocs = detect_anomaly(percepts, self.cfg.whitelists)
        if not iocs:
            self.world = update_world_state(self.world, [], t=sim.clock)
            return []
        before = {e: s.compromise.level for e, s in self.world.entities.items()}
        for ioc in iocs:
            detail = {"agent": self.cfg.name, "entity": ioc.entity,
                      "evidence": ioc.evidence, "delta": ioc.delta}
            if ioc.peer is not None:
                detail["peer"] = ioc.peer
                detail["peer_delta"] = ioc.peer_delta
            sim.emit(self.cfg.node, "ioc", detail)
        self.world = update_world_state(self.world, iocs, t=sim.clock)
        for entity in sorted(self.world.entities):
            level = self.world.entities[entity].compromise.level
            if level is not before.get(entity, Level.CLEAN):
                sim.emit(self.cfg.node, "level",
                         {"agent": self.cfg.name, "entity": entity, "level": level.name,
                          "confidence": round(self.world.entities[entity].compromise.confidence, 6)})
        return iocs

    def _learn(self, percepts: list[Percept]) -> None:
        if self.cfg.learning.mode is LearningMode.OFF:
            return
        for percept in percepts:
            tag = percept_tag(percept)
            if tag is not None:
                self.recorder.add(percept.t, None, tag)

    def _world_snapshot(self) -> dict:
        return {
            entity: {"level": st.compromise.level.name,
                     "confidence": round(st.compromise.confidence, 9)}
            for entity, st in sorted(self.world.entities.items())
        }

    # -- planning & execution ---------------------------------------------------

    def current_state(self) -> AbstractState:
        flags = set(self.flags)
        alerts = len(self.peer_alerts)
        if alerts >= 1:
            flags.add("peer_alerts_ge1")
        if alerts >= 2:
            flags.add("peer_alerts_ge2")
        own = self.world.entities[self.cfg.node].compromise.level
        if own is Level.POTENTIAL:
            flags.add("suspect_self")
        elif own >= Level.LIKELY:
            flags.add("compromised_self")
        if any(name.startswith("peer_compromised:") for name in flags):
            flags.add("peer_compromised")
        return abstract_state(self.world, flags)

    def _decide(self) -> None:
        state = self.current_state()
        seeds: list[tuple[str, ...]] = []
        if self.cfg.learning.mode is LearningMode.ACTIVE and self.recent_actions:
            recent = tuple(self.recent_actions[-self.cfg.learning.recent_window:])
            suffix = self.experience.match_episodes(recent, self.cfg.learning.match_threshold)
            if suffix:
                seeds.append(suffix)
        stream = plan_stream(state, self.cfg.repertoire, depth=self.cfg.depth,
                             branch=self.cfg.branch, dynamics=self.dynamics,
                             seed_plans=seeds)
        selection = select(stream, self.goals, self.cfg.repertoire,
                           plan_budget=self.cfg.plan_budget)
        self.stats.selections += 1
        if selection.fallback:
            self.rt.sim.emit(self.cfg.node, "no-acceptable-plan", {"agent": self.cfg.name})
            return
        if selection.plan.actions == ("no_action",) or all(
                a == "no_action" for a in selection.plan.actions):
            return
        self._plan = selection.plan
        self._plan_statuses = []
        self._plan_step = 0
        self._schedule_step()

    @property
    def goals(self) -> GoalProfile:
        if self.cfg.goals is None:
            entity_count = len(self.rt.sim.topology.nodes)
            self.cfg.goals = GoalProfile(
                goal_functions={"integrity": (1.0, integrity_goal(entity_count))})
        return self.cfg.goals

    def _schedule_step(self) -> None:
        plan = self._plan
        idx = self._plan_step
        action_id = plan.actions[idx]
        duration = self.cfg.repertoire[action_id].duration
        done_at = self.rt.sim.clock + duration
        self._busy_until = done_at
        self.rt.sim.call_at(done_at, lambda: self._complete_step(plan, idx))

    def _complete_step(self, plan: Plan, idx: int) -> None:
        if self._plan is not plan or self._plan_step != idx or self.disabled:
            return
        action_id = plan.actions[idx]
        prev_state = self.current_state()
        status = self._perform(action_id)
        self._plan_statuses.append(status)
        spec = self.cfg.repertoire[action_id]
        detail = {"agent": self.cfg.name, "action": action_id,
                  "target": (spec.op or {}).get("node", self.cfg.node),
                  "args": {k: v for k, v in sorted((spec.op or {}).items()) if k != "kind"},
                  "status": status.status.value}
        if status.message:
            detail["message"] = status.message
        self.rt.sim.emit(self.cfg.node, "command", detail)
        self.stats.executed += 1
        if status.status is Status.DONE:
            self.flags |= set(spec.adds)
            self.flags -= set(spec.removes)
            self.recent_actions.append(action_id)
            if self.cfg.learning.mode is not LearningMode.OFF:
                self.recorder.add(self.rt.sim.clock, action_id, None)
                self.dynamics.record_transition(prev_state, action_id, self.current_state())
        decision = adjust(plan, self._plan_statuses)
        if decision is Adjustment.CONTINUE:
            self._plan_step += 1
            if self._plan_step >= len(plan.steps):
                self._plan = None
                self._plan_statuses = []
            else:
                self._schedule_step()
        elif decision is Adjustment.RETRY_STEP:
            self.stats.retries += 1
            self.rt.sim.emit(self.cfg.node, "retry", {"agent": self.cfg.name, "action": action_id})
            self._schedule_step()
        else:
            self.stats.replans += 1
            self.rt.sim.emit(self.cfg.node, "replan", {"agent": self.cfg.name, "action": action_id})
            self._plan = None
            self._plan_statuses = []

    # -- action performers ---------------------------------------------------------

    def _perform(self, action_id: str) -> StepStatus:
        spec = self.cfg.repertoire[action_id]
        op = dict(spec.op or {})
        kind = op.pop("kind", "noop")
        handler = getattr(self, f"_op_{kind}", None)
        if handler is None:
            return StepStatus(Status.WRONGLY_DONE, f"unknown operation {kind!r}")
        try:
            return handler(**op)
        except SubstrateError as exc:
            return StepStatus(Status.WRONGLY_DONE, str(exc))

    def _op_noop(self) -> StepStatus:
        return StepStatus(Status.DONE)

    def _op_run_integrity_check(self, node: Optional[NodeId] = None) -> StepStatus:
        node = node or self.cfg.node
        whitelist = self.cfg.whitelists.file_hashes.get(node, {})
        findings = self.rt.substrate.check_integrity(node, whitelist)
        for finding in findings:
            self.rt.substrate.queue_percept(node, PerceptKind.INTEGRITY_FINDING,
                                            {"node": node, "path": finding.path,
                                             "reason": finding.reason,
                                             "change_authorized": finding.change_authorized})
        return StepStatus(Status.DONE)

    def _op_run_antivirus_scan(self, node: Optional[NodeId] = None) -> StepStatus:
        node = node or self.cfg.node
        state = self.rt.substrate.node(node)
        for pid, record in sorted(state.processes.items()):
            if record.image in self.cfg.whitelists.process_blacklist:
                self.tagged_foes.add(str(pid))
        return StepStatus(Status.DONE)

    def _op_delete_file(self, node: NodeId, path: str, privileged: bool = False) -> StepStatus:
        result = self.rt.substrate.delete_file(node, path, privileged)
        if result != "ok":
            return StepStatus(Status.WRONGLY_DONE, result)
        return StepStatus(Status.DONE)

    def _op_restore_file_from_backup(self, node: NodeId, path: str) -> StepStatus:
        baseline = self.cfg.whitelists.file_hashes.get(node, {}).get(path)
        if baseline is None:
            return StepStatus(Status.WRONGLY_DONE, f"no backup hash for {path} on {node}")
        self.rt.substrate.write_file(node, path, baseline, authorized=True, actor=self.cfg.name)
        return StepStatus(Status.DONE)

    def _op_run_diagnostics(self, node: Optional[NodeId] = None) -> StepStatus:
        node = node or self.cfg.node
        self.rt.substrate.append_log(node, "diagnostics started", as_percept=True)
        return StepStatus(Status.DONE)

    def _op_lockdown_node(self, node: Optional[NodeId] = None) -> StepStatus:
        node = node or self.cfg.node
        self.rt.substrate.node(node).lockdown = True
        self.rt.substrate.append_log(node, "lockdown engaged")
        return StepStatus(Status.DONE)

    def _op_remap_port(self, node: NodeId, from_port: int, to_port: int,
                       decoy: bool = False) -> StepStatus:
        self.rt.substrate.remap_port(node, from_port, to_port, decoy=decoy)
        return StepStatus(Status.DONE)

    def _op_deploy_decoy(self, node: NodeId, decoy_kind: str) -> StepStatus:
        self.rt.substrate.deploy_decoy(node, DecoyKind(decoy_kind))
        return StepStatus(Status.DONE)

    def _op_shut_down_service(self, node: NodeId, port: int) -> StepStatus:
        state = self.rt.substrate.node(node)
        entry = state.ports.get(port)
        if entry is None or not entry.open:
            return StepStatus(Status.NOT_DONE)
        entry.open = False
        return StepStatus(Status.DONE)

    def _op_quarantine_process(self, node: Optional[NodeId] = None) -> StepStatus:
        node = node or self.cfg.node
        reds = self.rt.reds_on(node)
        if not reds:
            return StepStatus(Status.NOT_DONE)
        for red in reds:
            red.neutralize()
        self.world = reset_entity(self.world, node)
        self.rt.sim.emit(self.cfg.node, "quarantine", {"agent": self.cfg.name, "node": node})
        return StepStatus(Status.DONE)

    def _op_contain_red(self, node: Optional[NodeId] = None) -> StepStatus:
        node = node or self.cfg.node
        reds = self.rt.reds_on(node)
        if not reds:
            return StepStatus(Status.NOT_DONE)
        for red in reds:
            red.contained = True
        self.rt.substrate.append_log(node, "red traffic redirected to honeypot")
        return StepStatus(Status.DONE)

    def _op_quarantine_agent(self) -> StepStatus:
        peer = self._first_compromised_peer()
        if peer is None:
            return StepStatus(Status.NOT_DONE)
        target = self.rt.agents[peer]
        target.disabled = True
        self.flags.discard(f"peer_compromised:{peer}")
        self.flags.add(f"peer_neutralized:{peer}")
        self.rt.sim.emit(self.cfg.node, "quarantine",
                         {"agent": self.cfg.name, "peer": peer, "node": target.cfg.node})
        return StepStatus(Status.DONE)

    def _op_overwrite_agent_image(self) -> StepStatus:
        peer = next((f.split(":", 1)[1] for f in sorted(self.flags)
                     if f.startswith("peer_neutralized:")), None)
        if peer is None:
            return StepStatus(Status.NOT_DONE)
        target = self.rt.agents[peer]
        target._compromised_key = None
        target.disabled = False
        sim = self.rt.sim
        sim.call_at(sim.clock + target.cfg.period, target._cycle)
        sim.emit(self.cfg.node, "replicate",
                 {"agent": self.cfg.name, "peer": peer, "node": target.cfg.node})
        return StepStatus(Status.DONE)

    def _op_notify_peers(self, risk: str = "compromise-suspected") -> StepStatus:
        peers = self.discover()
        subject = self._most_suspect_entity()
        self.send_alert([p.name for p in peers], {"risk": risk, "entity": subject})
        if self.rt.c2 is not None:
            self.rt.sim.emit(self.cfg.node, "alert-sent",
                             {"agent": self.cfg.name, "to": "C2", "entity": subject})
            self._send_to_node(self.rt.c2.node, MessageKind.C2, "alert",
                               {"risk": risk, "entity": subject, "cfh": True})
            self.alerts_sent += 1
        return StepStatus(Status.DONE)

    def _op_query_c2(self, question: str = "remediation-instructions") -> StepStatus:
        self.query_c2(question)
        return StepStatus(Status.DONE)

    def _first_compromised_peer(self) -> Optional[str]:
        names = sorted(f.split(":", 1)[1] for f in self.flags if f.startswith("peer_compromised:"))
        return names[0] if names else None

    def _most_suspect_entity(self) -> str:
        ranked = sorted(self.world.entities.items(),
                        key=lambda kv: (-int(kv[1].compromise.level), -kv[1].compromise.confidence, kv[0]))
        return ranked[0][0] if ranked else self.cfg.node

    # -- collaboration ----------------------------------------------------------

    def discover(self) -> list[AgentIdentity]:
        reachable = set()
        for name, agent in self.rt.agents.items():
            if name == self.cfg.name or agent.disabled:
                continue
            try:
                self.rt.sim.topology.route(self.cfg.node, agent.cfg.node)
            except NoRouteError:
                continue
            reachable.add(name)
        return collab_proto.discover(self.rt.identities(), reachable)

    def send_alert(self, peers: list[str], risk: dict) -> dict[str, bool]:
        """Alert peers about a risk; receipts show which transmissions survived."""
        receipts: dict[str, bool] = {}
        body = dict(risk, cfh=True)
        for name in sorted(peers):
            agent = self.rt.agents.get(name)
            if agent is None:
                continue
            self.rt.sim.emit(self.cfg.node, "alert-sent",
                             {"agent": self.cfg.name, "to": name,
                              "entity": body.get("entity", self.cfg.node)})
            outcome = self._send_to_node(agent.cfg.node, MessageKind.AGENT, "alert", body)
            receipts[name] = not outcome.dropped
            self.alerts_sent += 1
        if peers:
            self.flags.add("peers_alerted")
        return receipts

    def query_c2(self, question: str) -> None:
        if self.rt.c2 is None:
            self._local_decision()
            return
        self._c2_epoch += 1
        self._c2_replied = False
        self._peer_replied = False
        epoch = self._c2_epoch
        self.flags.add("awaiting_guidance")
        self.rt.sim.emit(self.cfg.node, "c2-query",
                         {"agent": self.cfg.name, "question": question,
                          "entity": self._most_suspect_entity()})
        self._send_to_node(self.rt.c2.node, MessageKind.C2, "c2-query",
                           {"question": question, "cfh": True})
        self.alerts_sent += 1
        self.rt.sim.call_at(self.rt.sim.clock + self.cfg.collab.c2_wait,
                            lambda: self._c2_timeout(epoch))

    def _c2_timeout(self, epoch: int) -> None:
        if epoch != self._c2_epoch or self._c2_replied or self.disabled:
            return
        self.rt.sim.emit(self.cfg.node, "c2-timeout", {"agent": self.cfg.name})
        peers = [p.name for p in self.discover()]
        if not peers:
            self._local_decision()
            return
        self.rt.sim.emit(self.cfg.node, "peer-contact", {"agent": self.cfg.name, "peers": peers})
        self.send_alert(peers, {"risk": "compromise-suspected",
                                "entity": self._most_suspect_entity(),
                                "reply_requested": True})
        self.rt.sim.call_at(self.rt.sim.clock + self.cfg.collab.peer_wait,
                            lambda: self._peer_timeout(epoch))

    def _peer_timeout(self, epoch: int) -> None:
        if epoch != self._c2_epoch or self._peer_replied or self.disabled:
            return
        self.rt.sim.emit(self.cfg.node, "peer-timeout", {"agent": self.cfg.name})
        self._local_decision()

    def _local_decision(self) -> None:
        self.flags.discard("awaiting_guidance")
        self.flags.add("local_decision")
        self.rt.sim.emit(self.cfg.node, "local-decision", {"agent": self.cfg.name})

    def negotiate(self, task_id: str, requirements: dict, terms: dict) -> Optional[str]:
        """Offload a task to a capable peer; returns the chosen peer or None."""
        if task_id in self.collab.active_tasks:
            return None
        target = self.collab.pick_negotiation_target(requirements)
        if target is None:
            return None
        self.collab.active_tasks.add(task_id)
        epoch = self._negotiation_epochs.get(task_id, 0) + 1
        self._negotiation_epochs[task_id] = epoch
        agent = self.rt.agents[target]
        self._send_to_node(agent.cfg.node, MessageKind.AGENT, "negotiate",
                           {"task_id": task_id, "requirements": requirements, "terms": terms})
        self.rt.sim.call_at(self.rt.sim.clock + self.cfg.collab.negotiation_wait,
                            lambda: self._negotiation_timeout(task_id, epoch))
        return target

    def _negotiation_timeout(self, task_id: str, epoch: int) -> None:
        if self._negotiation_epochs.get(task_id) != epoch:
            return
        if task_id in self.collab.active_tasks:
            self.collab.active_tasks.discard(task_id)
            self.rt.sim.emit(self.cfg.node, "negotiation-timeout",
                             {"agent": self.cfg.name, "task": task_id})

    # -- messaging ----------------------------------------------------------------

    def _send_to_node(self, node: NodeId, kind: MessageKind, msg_type: str, body: dict):
        body = dict(body, **{"from": self.cfg.name})
        payload = collab_proto.encode_envelope(msg_type, body)
        msg = self.rt.sim.make_message(self.cfg.node, node, kind, payload,
                                       collab_proto.sign(self.signing_key, payload))
        return self.rt.sim.send_message(msg, self.rt.deliver, trace_kind="message")

    def on_message(self, msg: Message) -> None:
        if self.disabled:
            return
        sim = self.rt.sim
        try:
            msg_type, body = collab_proto.decode_envelope(msg.payload)
        except collab_proto.CollabError:
            self.stats.dropped_messages += 1
            self.sanitation.dropped += 1
            return
        sender = body.get("from", "?")
        if not self._verify_sender(sender, msg):
            self.stats.dropped_messages += 1
            self.sanitation.dropped += 1
            self.collab.trust.update(sender, "auth-fail")
            self.collab.authenticated.discard(sender)
            detail = {"agent": self.cfg.name, "peer": sender}
            if msg_type == "alert-reply":
                sim.emit(self.cfg.node, "peer-reply-invalid", detail)
                self.flags.add(f"peer_compromised:{sender}")
                self.tagged_foes.add(sender)
            else:
                sim.emit(self.cfg.node, "auth-fail", detail)
            return
        if sender != "C2":
            self.collab.authenticated.add(sender)
        sim.emit(self.cfg.node, "msg-received", {"from": sender, "type": msg_type})
        self.rt.substrate.queue_percept(self.cfg.node, PerceptKind.MESSAGE_RECEIVED,
                                        {"src": sender, "type": msg_type})
        handler = getattr(self, f"_on_{msg_type.replace('-', '_')}", None)
        if handler is not None:
            handler(sender, body)

    def _verify_sender(self, sender: str, msg: Message) -> bool:
        if sender == "C2" and self.rt.c2 is not None:
            key = self.rt.keys.get(self.rt.c2.key_id, "")
        else:
            peer = self.rt.agents.get(sender)
            if peer is None:
                return False
            key = self.rt.keys.get(peer.cfg.key_id, "")
        return collab_proto.verify(key, msg.payload, msg.signature)

    def _on_alert(self, sender: str, body: dict) -> None:
        self.peer_alerts[sender] = self.rt.sim.clock
        entity = body.get("entity")
        if entity in self.world.entities:
            self.flags.add(f"peer_alert:{entity}")
        if body.get("reply_requested") and self.cfg.collab.reply_delay is not None:
            delay = self.cfg.collab.reply_delay
            self.rt.sim.call_at(self.rt.sim.clock + delay,
                                lambda: self._send_alert_reply(sender))

    def _send_alert_reply(self, sender: str) -> None:
        if self.disabled:
            return
        peer = self.rt.agents.get(sender)
        if peer is None:
            return
        self._send_to_node(peer.cfg.node, MessageKind.AGENT, "alert-reply",
                           {"recommendation": "quarantine-then-report"})

    def _on_alert_reply(self, sender: str, body: dict) -> None:
        self._peer_replied = True
        self.flags.discard("awaiting_guidance")
        self.flags.add("guidance")
        self.rt.sim.emit(self.cfg.node, "peer-reply",
                         {"agent": self.cfg.name, "peer": sender,
                          "recommendation": body.get("recommendation")})

    def _on_scd(self, sender: str, body: dict) -> None:
        record = ServiceRecord(sender, list(body.get("services", [])),
                               float(body.get("memory", 0)), float(body.get("storage", 0)),
                               float(body.get("cpu", 0)), self.rt.sim.clock)
        self.collab.declare_services(record)

    def _on_negotiate(self, sender: str, body: dict) -> None:
        request = NegotiationRequest(body["task_id"], body.get("requirements", {}),
                                     body.get("terms", {}))
        record = ServiceRecord(self.cfg.name, self.cfg.services, *self.cfg.capacities,
                               t=self.rt.sim.clock)
        busy = self._busy_until if self._plan is not None else None
        response = respond_to_negotiation(request, record, busy,
                                          self.collab.has_conflicting_agreement(request.terms))
        reply = {"task_id": request.task_id, "response": response.kind.value}
        if response.counter_terms is not None:
            reply["counter_terms"] = response.counter_terms
        if response.kind is ResponseKind.ACCEPT:
            self.collab.register_agreement(sender, request.task_id,
                                           request.terms, self.rt.sim.clock)
            self.rt.sim.emit(self.cfg.node, "agreement",
                             {"agent": self.cfg.name, "peer": sender, "task": request.task_id})
            # Agreement precedes the plan update on the responder side.
            if body.get("actions"):
                self.flags.add(f"agreed_task:{request.task_id}")
        sender_agent = self.rt.agents[sender]
        self._send_to_node(sender_agent.cfg.node, MessageKind.AGENT, "negotiate-response", reply)

    def _on_negotiate_response(self, sender: str, body: dict) -> None:
        task_id = body.get("task_id")
        if task_id not in self.collab.active_tasks:
            return
        self.collab.active_tasks.discard(task_id)
        self._negotiation_epochs[task_id] = self._negotiation_epochs.get(task_id, 0) + 1
        kind = body.get("response")
        detail = {"agent": self.cfg.name, "peer": sender, "task": task_id, "response": kind}
        if kind == ResponseKind.ACCEPT.value:
            self.collab.register_agreement(sender, task_id, body.get("terms", {}),
                                           self.rt.sim.clock)
            self.rt.sim.emit(self.cfg.node, "agreement", detail)
        else:
            self.rt.sim.emit(self.cfg.node, "negotiation", detail)

    def _on_status_query(self, sender: str, body: dict) -> None:
        if self.rt.c2 is None:
            return
        self._send_to_node(self.rt.c2.node, MessageKind.C2, "status-report",
                           {"state": self._most_suspect_entity()})

    def _on_c2_order(self, sender: str, body: dict) -> None:
        """Fig-18 style order handling: feasibility, ack, execute, report."""
        self._c2_replied = True
        self.flags.discard("awaiting_guidance")
        order = body.get("order", {})
        action_id = order.get("action")
        sim = self.rt.sim
        if action_id not in self.cfg.repertoire:
            self._send_to_node(self.rt.c2.node, MessageKind.C2, "c2-response",
                               {"answer": "cannot do", "why": f"no action {action_id!r}"})
            sim.emit(self.cfg.node, "c2-order-refused",
                     {"agent": self.cfg.name, "action": str(action_id)})
            return
        spec = self.cfg.repertoire[action_id]
        if not spec.feasible_in(self.current_state()):
            self._send_to_node(self.rt.c2.node, MessageKind.C2, "c2-response",
                               {"answer": "cannot do", "why": "preconditions not met"})
            sim.emit(self.cfg.node, "c2-order-refused",
                     {"agent": self.cfg.name, "action": action_id})
            return
        self._send_to_node(self.rt.c2.node, MessageKind.C2, "c2-response", {"answer": "will do"})
        status = self._perform(action_id)
        if status.status is Status.DONE:
            self.flags |= set(spec.adds)
            self.flags -= set(spec.removes)
            answer = {"answer": "success"}
        else:
            answer = {"answer": "action failed", "why": status.message or status.status.value}
        self._send_to_node(self.rt.c2.node, MessageKind.C2, "c2-response", answer)
        sim.emit(self.cfg.node, "command",
                 {"agent": self.cfg.name, "action": action_id, "target": self.cfg.node,
                  "args": {}, "status": status.status.value, "ordered_by": "C2"})


def percept_tag(percept: Percept) -> Optional[str]:
    """Map a percept to the state-assessor vocabulary."""
    attrs = percept.attributes
    if percept.kind is PerceptKind.CONNECTION and attrs.get("dst") == "enemy-c2":
        return "enemy-c2-traffic"
    if percept.kind is PerceptKind.MESSAGE_RECEIVED and attrs.get("type") == "alert":
        return "peer-alert"
    if percept.kind is PerceptKind.INTEGRITY_FINDING:
        if attrs.get("reason") == "unexpected-path":
            return "unexpected-file"
        return "integrity-violation"
    if percept.kind is PerceptKind.HONEY_EVENT:
        return "honey-event"
    if percept.kind is PerceptKind.FUNCTIONAL_ANOMALY:
        return "functional-anomaly"
    if percept.kind is PerceptKind.SCAN_PROBE:
        return "scan-probe"
    return None
