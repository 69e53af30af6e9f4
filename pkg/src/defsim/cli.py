"""Command-line surface: run, verify, deception plan, inspect."""

from __future__ import annotations

import argparse
import json
import sys
from collections import Counter
from pathlib import Path

from .deception import (DeceptionGoal, GoalPattern, InfeasibleError, ModelError,
                        load_behavior_model, load_playbooks, load_symbol_map,
                        plan_playbook, prune_dont_cares, relevant_paths,
                        select_parameters)
from .harness import diff_trace, run_file
from .kernel import ParseError, ValidationError
from .scenario import ScenarioError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="defsim",
                                     description="Deterministic multi-agent cyber-defense simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a scenario and emit trace/metrics")
    p_run.add_argument("scenario")
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--trace", help="write newline-delimited JSON trace here")
    p_run.add_argument("--metrics", help="write the metrics JSON document here")

    p_verify = sub.add_parser("verify", help="run a scenario and diff against a golden trace")
    p_verify.add_argument("scenario")
    p_verify.add_argument("--golden", required=True)
    p_verify.add_argument("--seed", type=int, default=None)

    p_dec = sub.add_parser("deception", help="behavior-model analysis")
    dec_sub = p_dec.add_subparsers(dest="deception_command", required=True)
    p_plan = dec_sub.add_parser("plan", help="select parameters and map to a playbook")
    p_plan.add_argument("model", help="behavior model JSON")
    p_plan.add_argument("symbols", help="symbol map JSON (may embed a playbook library)")
    p_plan.add_argument("goal", choices=[g.value for g in DeceptionGoal])
    p_plan.add_argument("--pattern", help="comma-separated api goal pattern "
                                          "(default: model's goal_pattern field)")
    p_plan.add_argument("--contiguous", action="store_true",
                        help="require the pattern as a contiguous run")
    p_plan.add_argument("--playbooks", help="playbook library JSON (overrides embedded)")
    p_plan.add_argument("--facts", default="", help="comma-separated environment facts")
    p_plan.add_argument("--pure", action="store_true", help="force the pure-Python kernel")

    p_inspect = sub.add_parser("inspect", help="summarize a trace file")
    p_inspect.add_argument("trace")
    p_inspect.add_argument("--entity", help="only records touching this entity")

    return parser


def cmd_run(args) -> int:
    result = run_file(args.scenario, seed=args.seed)
    lines = result.lines
    if args.trace:
        Path(args.trace).write_text("\n".join(lines) + "\n")
    if args.metrics:
        Path(args.metrics).write_text(
            json.dumps(result.metrics.as_dict(), sort_keys=True, indent=2) + "\n")
    print(f"{result.scenario.name}: {len(lines)} trace records, "
          f"reward {result.metrics.reward:.4f}")
    return 0


def cmd_verify(args) -> int:
    result = run_file(args.scenario, seed=args.seed)
    divergence = diff_trace(result.lines, args.golden)
    if divergence is None:
        print(f"{result.scenario.name}: trace matches {args.golden}")
        return 0
    print(divergence.report(), file=sys.stderr)
    return 1


def cmd_deception_plan(args) -> int:
    model_doc = json.loads(Path(args.model).read_text())
    symbols_doc = json.loads(Path(args.symbols).read_text())
    model = load_behavior_model(model_doc)
    symbol_map = load_symbol_map(symbols_doc)

    pattern = (args.pattern.split(",") if args.pattern
               else model_doc.get("goal_pattern"))
    if not pattern:
        print("no goal pattern: pass --pattern or add goal_pattern to the model",
              file=sys.stderr)
        return 1
    paths = relevant_paths(model, GoalPattern(tuple(pattern)), contiguous=args.contiguous)
    if not paths:
        print("no relevant paths exhibit the goal pattern", file=sys.stderr)
        return 1
    live = prune_dont_cares(model, paths)
    selection = select_parameters(model, paths, live, symbol_map, force_pure=args.pure)

    library_doc = (json.loads(Path(args.playbooks).read_text()) if args.playbooks
                   else symbols_doc.get("playbooks", []))
    library = load_playbooks(library_doc)
    facts = [f for f in args.facts.split(",") if f]
    playbook = plan_playbook(selection.parameters, library, DeceptionGoal(args.goal),
                             facts=facts, symbol_map=symbol_map)
    output = {
        "relevant_paths": paths,
        "live_symbols": sorted(live),
        "parameters": sorted(selection.parameters),
        "cost": selection.cost,
        "playbook": None if playbook is None else {
            "name": playbook.name,
            "goal": playbook.goal.value,
            "parameters": sorted(playbook.parameters),
            "actions": list(playbook.actions),
        },
    }
    print(json.dumps(output, indent=2, sort_keys=True))
    return 0


def cmd_inspect(args) -> int:
    lines = Path(args.trace).read_text().splitlines()
    records = [json.loads(line) for line in lines if line]
    if args.entity:
        def touches(r):
            return (r.get("node") == args.entity
                    or r.get("detail", {}).get("entity") == args.entity
                    or r.get("detail", {}).get("target") == args.entity)
        records = [r for r in records if touches(r)]
    counts = Counter(r["kind"] for r in records)
    span = (records[0]["t"], records[-1]["t"]) if records else (0, 0)
    print(f"{len(records)} records, t={span[0]}..{span[1]}")
    for kind, n in sorted(counts.items()):
        print(f"  {kind:20s} {n}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return cmd_run(args)
        if args.command == "verify":
            return cmd_verify(args)
        if args.command == "deception":
            return cmd_deception_plan(args)
        if args.command == "inspect":
            return cmd_inspect(args)
    except (ScenarioError, ParseError, ValidationError, ModelError, InfeasibleError,
            FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 2


if __name__ == "__main__":
    sys.exit(main())
