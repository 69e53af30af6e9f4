"""Planning, action selection, and execution control.

States are abstracted to flag sets. Planning enumerates bounded action trees
(feasible actions via precondition filtering, successors via the learned
dynamics table with a declared-effect fallback) and streams plans to the
selector, which scores them on efficacy, rapidity, and risk.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Iterator, Optional

from .kernel import SimTime
from .memory import TransitionTable
from .sensing import Level, WorldState

AbstractState = frozenset  # of str flags

NULL_ACTION = "no_action"


class DecisionError(Exception):
    pass


class InfeasibleActionError(DecisionError):
    pass


class ActionCategory(str, Enum):
    ADMIN = "admin"
    ANTIVIRUS = "antivirus"
    INTEGRITY = "integrity"
    ACTIVE_DEFENSE = "active-defense"
    PROXY = "proxy"
    COMMS = "comms"
    COLLABORATION = "collaboration"
    NULL = "null"


@dataclass(frozen=True)
class ActionSpec:
    action_id: str
    category: ActionCategory
    requires: frozenset = frozenset()   # flags that must be present
    forbids: frozenset = frozenset()    # flags that must be absent
    adds: frozenset = frozenset()       # abstract effect on the flag set
    removes: frozenset = frozenset()
    op: Optional[dict] = None           # concrete substrate/comms mutation
    cost: float = 0.0
    risk: float = 0.0
    duration: SimTime = 0

    def feasible_in(self, state: AbstractState) -> bool:
        return self.requires <= state and not (self.forbids & state)

    def apply_effect(self, state: AbstractState) -> AbstractState:
        return frozenset((state - self.removes) | self.adds)


def null_action() -> ActionSpec:
    return ActionSpec(NULL_ACTION, ActionCategory.NULL)


class Repertoire:
    """The agent's response repertoire; always contains the null action."""

    def __init__(self, actions: Iterable[ActionSpec] = ()):
        self.actions: dict[str, ActionSpec] = {NULL_ACTION: null_action()}
        for spec in actions:
            self.actions[spec.action_id] = spec

    def __getitem__(self, action_id: str) -> ActionSpec:
        return self.actions[action_id]

    def __contains__(self, action_id: str) -> bool:
        return action_id in self.actions

    def feasible_actions(self, state: AbstractState) -> list[str]:
        """Exactly the actions whose preconditions hold, null always included."""
        return sorted(a for a, spec in self.actions.items() if spec.feasible_in(state))


def state_key(state: AbstractState) -> str:
    return "|".join(sorted(state))


def state_from_key(key: str) -> AbstractState:
    return frozenset(part for part in key.split("|") if part)


def predict(state: AbstractState, action_id: str, repertoire: Repertoire,
            dynamics: Optional[TransitionTable] = None) -> dict[AbstractState, float]:
    """Successor distribution for (state, action).

    Uses the learned dynamics table when the pair was observed; otherwise a
    single successor -- the action's declared effect -- at confidence zero.
    """
    spec = repertoire[action_id]
    if not spec.feasible_in(state):
        raise InfeasibleActionError(f"{action_id} infeasible in {sorted(state)}")
    if dynamics is not None:
        learned = dynamics.successor_distribution(state, action_id)
        if learned:
            return {state_from_key(k): p for k, p in learned.items()}
    return {spec.apply_effect(state): 1.0}


@dataclass
class ScoreComponents:
    efficacy: float = 0.0
    rapidity: SimTime = 0
    risk: float = 0.0


@dataclass
class Plan:
    plan_id: int
    steps: list[tuple[str, AbstractState]]
    probability: float = 1.0
    score: Optional[float] = None
    components: ScoreComponents = field(default_factory=ScoreComponents)

    def __post_init__(self):
        if not self.steps:
            raise ValueError("plan must have at least one step")

    @property
    def actions(self) -> tuple[str, ...]:
        return tuple(a for a, _ in self.steps)

    @property
    def terminal_state(self) -> AbstractState:
        return self.steps[-1][1]


GoalFunction = Callable[[AbstractState], float]


@dataclass
class GoalProfile:
    goal_functions: dict[str, tuple[float, GoalFunction]]  # name -> (weight, fn)
    w_efficacy: float = 1.0
    w_rapidity: float = 0.0
    w_risk: float = 0.0
    min_score: float = 0.0
    urgency: bool = False
    time_scale: SimTime = 60_000

    def __post_init__(self):
        if not self.goal_functions:
            raise ValueError("at least one goal function required")
        if min(self.w_efficacy, self.w_rapidity, self.w_risk) < 0:
            raise ValueError("criterion weights must be >= 0")
        if self.w_efficacy + self.w_rapidity + self.w_risk <= 0:
            raise ValueError("criterion weights must not all be zero")


def plan_stream(state: AbstractState, repertoire: Repertoire, goals_unused: Optional[GoalProfile] = None,
                depth: int = 3, branch: int = 3,
                dynamics: Optional[TransitionTable] = None,
                seed_plans: Iterable[tuple[str, ...]] = ()) -> Iterator[Plan]:
    """Depth-first bounded tree exploration, emitting plans incrementally.

    At every expansion all (feasible action, successor) pairs are ranked by
    successor probability (ties: action id, then state key) and the top
    `branch` are kept, so at most sum(branch**d for d in 1..depth) plans are
    emitted. Seed plans (e.g. retrieved cases) are emitted first, verbatim.
    """
    if depth < 1 or branch < 1:
        raise ValueError("depth and branch must be >= 1")
    counter = 0
    for actions in seed_plans:
        if not actions or not all(a in repertoire for a in actions):
            continue
        seeded_state = state
        steps = []
        for action_id in actions:
            seeded_state = repertoire[action_id].apply_effect(seeded_state)
            steps.append((action_id, seeded_state))
        counter += 1
        yield Plan(counter, steps)

    def expansions(here: AbstractState) -> list[tuple[str, AbstractState, float]]:
        options: list[tuple[float, str, str, AbstractState]] = []
        for action_id in repertoire.feasible_actions(here):
            for successor, prob in predict(here, action_id, repertoire, dynamics).items():
                options.append((-prob, action_id, state_key(successor), successor))
        options.sort(key=lambda item: item[:3])
        return [(a, s, -negp) for negp, a, _, s in options[:branch]]

    def walk(here: AbstractState, steps: list, prob: float) -> Iterator[Plan]:
        nonlocal counter
        if len(steps) >= depth:
            return
        for action_id, successor, p in expansions(here):
            new_steps = steps + [(action_id, successor)]
            counter += 1
            yield Plan(counter, new_steps, probability=prob * p)
            yield from walk(successor, new_steps, prob * p)

    yield from walk(state, [], 1.0)


def score(plan: Plan, goals: GoalProfile, repertoire: Repertoire) -> float:
    """Multicriteria score: weighted efficacy minus rapidity and risk penalties."""
    total_weight = sum(w for w, _ in goals.goal_functions.values())
    efficacy = sum(w * fn(plan.terminal_state) for w, fn in goals.goal_functions.values())
    efficacy = min(1.0, max(0.0, efficacy / total_weight))
    duration = sum(repertoire[a].duration for a in plan.actions)
    risk = 1.0
    for action_id in plan.actions:
        risk *= 1.0 - repertoire[action_id].risk
    risk = 1.0 - risk
    plan.components = ScoreComponents(efficacy=efficacy, rapidity=duration, risk=risk)
    plan.score = (goals.w_efficacy * efficacy
                  - goals.w_rapidity * (duration / goals.time_scale)
                  - goals.w_risk * risk)
    return plan.score


@dataclass
class Selection:
    plan: Plan
    fallback: bool = False  # true when nothing met min_score and null was used
    examined: int = 0


def select(plans: Iterable[Plan], goals: GoalProfile, repertoire: Repertoire,
           plan_budget: Optional[int] = None) -> Selection:
    """Pick a plan from the stream; closing the stream stops the planner.

    Urgent mode returns the first plan reaching min_score (or the best seen
    when the budget runs out); otherwise the argmax over the whole stream.
    Ties prefer shorter plans, then lower plan ids.
    """
    iterator = iter(plans)
    best: Optional[Plan] = None
    examined = 0
    try:
        for plan in iterator:
            examined += 1
            score(plan, goals, repertoire)
            if best is None or _better(plan, best):
                best = plan
            if goals.urgency and plan.score >= goals.min_score:
                best = plan
                break
            if plan_budget is not None and examined >= plan_budget:
                break
    finally:
        close = getattr(iterator, "close", None)
        if close:
            close()
    if best is None or (best.score < goals.min_score and not goals.urgency):
        null_plan = Plan(0, [(NULL_ACTION, frozenset())])
        score(null_plan, goals, repertoire)
        return Selection(null_plan, fallback=True, examined=examined)
    return Selection(best, examined=examined)


def _better(candidate: Plan, incumbent: Plan) -> bool:
    if candidate.score != incumbent.score:
        return candidate.score > incumbent.score
    if len(candidate.steps) != len(incumbent.steps):
        return len(candidate.steps) < len(incumbent.steps)
    return candidate.plan_id < incumbent.plan_id


class Status(str, Enum):
    DONE = "Done"
    NOT_DONE = "NotDone"
    WRONGLY_DONE = "WronglyDone"


@dataclass(frozen=True)
class StepStatus:
    status: Status
    message: Optional[str] = None  # substrate error text for WronglyDone

    def __post_init__(self):
        if self.status is Status.WRONGLY_DONE and not self.message:
            raise ValueError("WronglyDone requires the substrate error message")


Performer = Callable[[str], StepStatus]


def execute(plan: Plan, perform: Performer) -> Iterator[tuple[int, str, StepStatus]]:
    """Run plan steps in order, yielding per-step execution status.

    Atomicity is the substrate's contract; this layer records outcomes and
    stops after the first step that is not Done (adjustment takes over).
    """
    for idx, (action_id, _expected) in enumerate(plan.steps):
        status = perform(action_id)
        yield idx, action_id, status
        if status.status is not Status.DONE:
            return


class Adjustment(str, Enum):
    CONTINUE = "continue"
    RETRY_STEP = "retry-step"
    REPLAN = "replan"


def adjust(plan: Plan, statuses: list[StepStatus], effects_ok: bool = True) -> Adjustment:
    """Execution adjustment: retry a missed step once, replan on real failure."""
    if not statuses:
        return Adjustment.CONTINUE
    last = statuses[-1]
    if last.status is Status.DONE and effects_ok:
        return Adjustment.CONTINUE
    if last.status is Status.NOT_DONE:
        prior_not_done = sum(1 for s in statuses[:-1] if s.status is Status.NOT_DONE)
        return Adjustment.RETRY_STEP if prior_not_done == 0 else Adjustment.REPLAN
    return Adjustment.REPLAN


# -- world-state abstraction ----------------------------------------------------

def abstract_state(world: WorldState, extra_flags: Iterable[str] = ()) -> AbstractState:
    """Fixed deterministic abstraction from the world picture to flags."""
    flags = set(extra_flags)
    for entity, st in world.entities.items():
        if st.compromise.level is Level.POTENTIAL:
            flags.add(f"suspect:{entity}")
        elif st.compromise.level in (Level.LIKELY, Level.CONFIRMED):
            flags.add(f"compromised:{entity}")
    if any(st.compromise.level is not Level.CLEAN for st in world.entities.values()):
        flags.add("threat")
    if not world.self_integrity_ok:
        flags.add("self_integrity_violation")
    return frozenset(flags)


def integrity_goal(entity_count: int) -> GoalFunction:
    """1.0 when no entity is suspect or compromised, degrading with spread."""
    def g(state: AbstractState) -> float:
        suspects = sum(1 for f in state if f.startswith("suspect:"))
        compromised = sum(1 for f in state if f.startswith("compromised:"))
        return max(0.0, 1.0 - (0.5 * suspects + 1.0 * compromised) / max(entity_count, 1))
    return g


def progress_goal(milestones: list[str]) -> GoalFunction:
    """Degree of completion over scenario milestone flags."""
    def g(state: AbstractState) -> float:
        if not milestones:
            return 1.0
        return sum(1 for flag in milestones if flag in state) / len(milestones)
    return g


def availability_goal(entity_count: int) -> GoalFunction:
    def g(state: AbstractState) -> float:
        degraded = sum(1 for f in state if f.startswith("lockdown:") or f.startswith("shutdown:"))
        return max(0.0, 1.0 - degraded / max(entity_count, 1))
    return g
