"""Attack-behavior-model analysis and deception planning.

Pipeline: load a behavior-model graph, keep the paths exhibiting the goal
interaction pattern, drop don't-care symbols, pick the cheapest dependency-
closed parameter set that touches every retained path, and map it to a
playbook. The subset search runs on the compiled kernel when available and
falls back to a pure-Python branch and bound with the identical contract.
"""

from __future__ import annotations

import os
from array import array
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional, Sequence

try:  # compiled exhaustive kernel; optional
    from . import _subsetcover as _native
except ImportError:  # pragma: no cover - depends on build environment
    _native = None

MAX_EXACT_PARAMETERS = 20


def using_native_kernel() -> bool:
    return _native is not None and os.environ.get("DEFSIM_PURE") != "1"


class ModelError(Exception):
    pass


class CycleError(ModelError):
    pass


class DanglingEdgeError(ModelError):
    pass


class ForkConditionError(ModelError):
    pass


class InfeasibleError(Exception):
    """Some relevant path has no controllable parameter at all."""


@dataclass(frozen=True)
class ModelNode:
    node_id: str
    kind: str  # "poi" | "fork"
    api: Optional[str] = None
    symbols: tuple[str, ...] = ()


@dataclass(frozen=True)
class ModelEdge:
    src: str
    dst: str
    kind: str  # "control" | "data"
    condition_symbols: tuple[str, ...] = ()
    condition_expr: Optional[str] = None


class BehaviorModel:
    def __init__(self, nodes: list[ModelNode], edges: list[ModelEdge]):
        self.nodes = {n.node_id: n for n in nodes}
        self.edges = edges
        self.control_out: dict[str, list[ModelEdge]] = {n.node_id: [] for n in nodes}
        control_in: dict[str, int] = {n.node_id: 0 for n in nodes}
        for edge in edges:
            if edge.kind == "control":
                self.control_out[edge.src].append(edge)
                control_in[edge.dst] += 1
        for out in self.control_out.values():
            out.sort(key=lambda e: e.dst)
        roots = [n for n, deg in control_in.items() if deg == 0]
        self.root = roots[0] if len(roots) == 1 else None
        self._roots = roots

    def validate(self) -> "BehaviorModel":
        for edge in self.edges:
            for endpoint in (edge.src, edge.dst):
                if endpoint not in self.nodes:
                    raise DanglingEdgeError(f"edge {edge.src}->{edge.dst}: unknown node {endpoint}")
            if edge.kind == "data" and self.nodes[edge.src].kind != "poi":
                raise ModelError(f"data edge {edge.src}->{edge.dst} must originate at a poi")
        if len(self._roots) != 1:
            raise ModelError(f"control graph must have exactly one root, found {self._roots}")
        for node in self.nodes.values():
            if node.kind == "fork":
                out = self.control_out[node.node_id]
                if len(out) < 2:
                    raise ForkConditionError(f"fork {node.node_id} needs >= 2 outgoing control edges")
                if any(not e.condition_symbols and e.condition_expr is None for e in out):
                    raise ForkConditionError(f"fork {node.node_id} has an unconditioned branch")
            elif node.kind != "poi":
                raise ModelError(f"node {node.node_id}: unknown kind {node.kind!r}")
        # Cycle check over control edges (iterative DFS, deterministic order).
        WHITE, GREY, BLACK = 0, 1, 2
        colour = {n: WHITE for n in self.nodes}
        for start in sorted(self.nodes):
            if colour[start] != WHITE:
                continue
            stack: list[tuple[str, int]] = [(start, 0)]
            colour[start] = GREY
            while stack:
                node, idx = stack[-1]
                out = self.control_out[node]
                if idx < len(out):
                    stack[-1] = (node, idx + 1)
                    nxt = out[idx].dst
                    if colour[nxt] == GREY:
                        raise CycleError(f"control cycle through {nxt}")
                    if colour[nxt] == WHITE:
                        colour[nxt] = GREY
                        stack.append((nxt, 0))
                else:
                    colour[node] = BLACK
                    stack.pop()
        return self

    def api_sequence(self, path: Sequence[str]) -> tuple[str, ...]:
        return tuple(self.nodes[n].api for n in path if self.nodes[n].kind == "poi")

    def terminal(self, node_id: str) -> bool:
        return not self.control_out[node_id]


def load_behavior_model(doc: dict) -> BehaviorModel:
    """Build and validate a behavior model from a decoded JSON document."""
    if not isinstance(doc, dict) or "nodes" not in doc:
        raise ModelError("behavior model document needs a 'nodes' list")
    nodes = [
        ModelNode(str(n["id"]), n["kind"], n.get("api"), tuple(n.get("symbols", ())))
        for n in doc["nodes"]
    ]
    edges = []
    for e in doc.get("edges", ()):
        condition = e.get("condition") or {}
        edges.append(ModelEdge(str(e["from"]), str(e["to"]), e.get("kind", "control"),
                               tuple(condition.get("symbols", ())), condition.get("expr")))
    return BehaviorModel(nodes, edges).validate()


@dataclass(frozen=True)
class GoalPattern:
    apis: tuple[str, ...]

    def __post_init__(self):
        if not self.apis:
            raise ValueError("goal pattern must name at least one api")


def _contains_subsequence(haystack: Sequence[str], needle: Sequence[str]) -> bool:
    it = iter(haystack)
    return all(any(x == want for x in it) for want in needle)


def _contains_contiguous(haystack: Sequence[str], needle: Sequence[str]) -> bool:
    n = len(needle)
    return any(tuple(haystack[i:i + n]) == tuple(needle) for i in range(len(haystack) - n + 1))


def relevant_paths(model: BehaviorModel, goal: GoalPattern,
                   contiguous: bool = False) -> list[list[str]]:
    """Root-to-terminal control paths whose api sequence exhibits the goal.

    Subsequence semantics by default; contiguous=True demands an unbroken run.
    """
    if model.root is None:
        raise ModelError("model has no unique root")
    matcher = _contains_contiguous if contiguous else _contains_subsequence
    paths: list[list[str]] = []

    def walk(node: str, path: list[str]) -> None:
        path.append(node)
        if model.terminal(node):
            if matcher(model.api_sequence(path), goal.apis):
                paths.append(list(path))
        else:
            for edge in model.control_out[node]:
                walk(edge.dst, path)
        path.pop()

    walk(model.root, [])
    return paths


def prune_dont_cares(model: BehaviorModel, paths: Iterable[Sequence[str]]) -> set[str]:
    """Symbols appearing in branch conditions along the retained paths."""
    edge_lookup = {(e.src, e.dst): e for e in model.edges if e.kind == "control"}
    live: set[str] = set()
    for path in paths:
        for src, dst in zip(path, path[1:]):
            edge = edge_lookup[(src, dst)]
            live.update(edge.condition_symbols)
    return live


@dataclass
class SymbolMap:
    symbol_to_param: dict[str, str]
    costs: dict[str, float]
    dependencies: dict[str, set[str]]

    def validate(self) -> "SymbolMap":
        for symbol, param in self.symbol_to_param.items():
            if param not in self.costs:
                raise ModelError(f"symbol {symbol} maps to unknown parameter {param}")
        for param, deps in self.dependencies.items():
            for dep in deps:
                if dep not in self.costs:
                    raise ModelError(f"parameter {param} depends on unknown {dep}")
        # Dependency relation must be acyclic.
        state: dict[str, int] = {}

        def visit(param: str, trail: tuple[str, ...]) -> None:
            if state.get(param) == 1:
                raise CycleError(f"dependency cycle at {param}: {' -> '.join(trail)}")
            if state.get(param) == 2:
                return
            state[param] = 1
            for dep in sorted(self.dependencies.get(param, ())):
                visit(dep, trail + (dep,))
            state[param] = 2

        for param in sorted(self.costs):
            visit(param, (param,))
        return self

    def closure(self, param: str) -> set[str]:
        out = {param}
        frontier = [param]
        while frontier:
            for dep in self.dependencies.get(frontier.pop(), ()):
                if dep not in out:
                    out.add(dep)
                    frontier.append(dep)
        return out


def load_symbol_map(doc: dict) -> SymbolMap:
    params = doc.get("parameters", {})
    return SymbolMap(
        symbol_to_param=dict(doc.get("symbols", {})),
        costs={p: float(spec.get("cost", 0.0)) for p, spec in params.items()},
        dependencies={p: set(spec.get("deps", ())) for p, spec in params.items()},
    ).validate()


@dataclass(frozen=True)
class ParameterSelection:
    parameters: frozenset
    cost: float


def _pure_min_cover(costs: list[float], closures: list[int], paths: list[int]) -> tuple[int, float]:
    """Branch and bound over unions of dependency closures; exact."""
    n = len(costs)
    full = (1 << n) - 1
    covering: list[list[int]] = []
    for pmask in paths:
        params = [i for i in range(n) if pmask & (1 << i)]
        if not params:
            return -1, 0.0
        covering.append(params)
    covering.sort(key=len)

    def mask_cost(mask: int) -> float:
        return sum(costs[i] for i in range(n) if mask & (1 << i))

    best_mask, best_cost = -1, 0.0
    seen: set[int] = set()

    def dfs(mask: int, cost: float) -> None:
        nonlocal best_mask, best_cost
        if best_mask >= 0 and cost > best_cost:
            return
        if mask in seen:
            return
        seen.add(mask)
        uncovered = next((params for params in covering
                          if not any(mask & (1 << p) for p in params)), None)
        if uncovered is None:
            if best_mask < 0 or (cost, mask) < (best_cost, best_mask):
                best_mask, best_cost = mask, cost
            return
        for p in uncovered:
            new_mask = mask | closures[p] | (1 << p)
            if new_mask == mask:
                continue
            dfs(new_mask & full, mask_cost(new_mask))

    dfs(0, 0.0)
    return best_mask, best_cost


def min_cost_closed_cover(costs: Sequence[float], closures: Sequence[int],
                          paths: Sequence[int], force_pure: bool = False) -> tuple[int, float]:
    """Cheapest dependency-closed subset hitting every path mask.

    Returns (mask, cost); mask is -1 when some path cannot be covered. Equal
    costs resolve to the numerically smallest mask in both implementations.
    """
    if any(p == 0 for p in paths):
        return -1, 0.0
    if not force_pure and using_native_kernel():
        return _native.min_cost_closed_cover(array("d", costs), array("I", closures),
                                             array("I", paths))
    return _pure_min_cover(list(costs), list(closures), list(paths))


def select_parameters(model: BehaviorModel, paths: Sequence[Sequence[str]],
                      live_symbols: set[str], symbol_map: SymbolMap,
                      force_pure: bool = False) -> ParameterSelection:
    """Minimal-cost parameter set meeting the coverage/closure/cost criteria.

    Candidates come only from the retained paths (goal dependency holds by
    construction); every path must be touched; the set is dependency-closed.
    """
    per_path_params: list[set[str]] = []
    for path in paths:
        params = {
            symbol_map.symbol_to_param[s]
            for node_id in path
            for s in model.nodes[node_id].symbols
            if s in live_symbols and s in symbol_map.symbol_to_param
        }
        if not params:
            raise InfeasibleError(f"path {list(path)} has no mappable parameter")
        per_path_params.append(params)

    universe: set[str] = set()
    for params in per_path_params:
        for p in params:
            universe |= symbol_map.closure(p)
    ordered = sorted(universe)
    if len(ordered) > MAX_EXACT_PARAMETERS:
        raise ValueError(f"{len(ordered)} candidate parameters exceed the exact bound "
                         f"of {MAX_EXACT_PARAMETERS}")
    index = {p: i for i, p in enumerate(ordered)}
    costs = [symbol_map.costs[p] for p in ordered]
    closures = [sum(1 << index[d] for d in symbol_map.closure(p)) for p in ordered]
    path_masks = [sum(1 << index[p] for p in params) for params in per_path_params]

    mask, cost = min_cost_closed_cover(costs, closures, path_masks, force_pure=force_pure)
    if mask < 0:
        raise InfeasibleError("no dependency-closed cover exists")
    chosen = frozenset(p for p, i in index.items() if mask & (1 << i))
    return ParameterSelection(chosen, cost)


class DeceptionGoal(str, Enum):
    DEFLECT = "deflect"
    DISTORT = "distort"
    DEPLETE = "deplete"
    DISCOVER = "discover"


@dataclass(frozen=True)
class Playbook:
    name: str
    goal: DeceptionGoal
    parameters: frozenset
    actions: tuple[str, ...]
    preconditions: tuple[str, ...] = ()  # facts that must hold in the environment

    def __post_init__(self):
        if not self.parameters or not self.actions:
            raise ValueError("playbook needs parameters and actions")


def load_playbooks(entries: Iterable[dict]) -> list[Playbook]:
    return [
        Playbook(
            name=e["name"],
            goal=DeceptionGoal(e["goal"]),
            parameters=frozenset(e["parameters"]),
            actions=tuple(e["actions"]),
            preconditions=tuple(e.get("preconditions", ())),
        )
        for e in entries
    ]


def plan_playbook(selected: frozenset, library: Sequence[Playbook], goal: DeceptionGoal,
                  facts: Iterable[str] = (), symbol_map: Optional[SymbolMap] = None) -> Optional[Playbook]:
    """Cheapest matching playbook: key within the selected set, goal and facts ok."""
    facts = set(facts)
    matches = []
    for idx, playbook in enumerate(library):
        if playbook.goal is not goal:
            continue
        if not playbook.parameters <= selected:
            continue
        if not set(playbook.preconditions) <= facts:
            continue
        key_cost = (sum(symbol_map.costs.get(p, 0.0) for p in playbook.parameters)
                    if symbol_map else 0.0)
        matches.append((key_cost, idx, playbook))
    if not matches:
        return None
    return min(matches, key=lambda m: (m[0], m[1]))[2]
