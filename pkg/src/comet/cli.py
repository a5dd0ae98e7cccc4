"""``comet`` command line: sample, extract, refine, annotate, eval, export.

Exit codes: 0 success, 1 runtime or coverage failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from comet import annotate as ann
from comet import trace as tr
from comet.envs import ENVIRONMENTS, UnknownEnvironment, make_env
from comet.intervene import refine_model
from comet.pipeline import (
    CausalWorldModel,
    extract_world_model,
    prediction_accuracy,
    uncovered_properties,
)
from comet.symreg import SearchConfig

log = logging.getLogger("comet")

_DEFAULTS = SearchConfig()


class UsageError(Exception):
    pass


def _env(name: str):
    try:
        return make_env(name)
    except UnknownEnvironment as exc:
        raise UsageError(str(exc)) from None


def _out(text: str, path: str | None) -> None:
    if path:
        Path(path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_sample(args) -> int:
    env = _env(args.env)
    replay = tr.load(args.replay) if args.replay else None
    try:
        policy = tr.parse_policy(args.policy, args.seed, env.actions, replay)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    trace = tr.sample(env, policy, args.steps, args.seed, args.detector)
    tr.save(trace, args.out)
    seen = sorted({f"{o.category}{o.instance or ''}" for objs in trace.objects for o in objs if o.visible})
    print(f"{len(trace)} steps, {len(seen)} objects seen: {', '.join(seen)}")
    return 0


def _coverage_report(model: CausalWorldModel) -> str:
    cov = model.coverage
    lines = [
        f"bound cells: {model.bound_cells}",
        f"hidden cells: {model.hidden_cells}",
        f"fit calls: {model.fit_calls}",
        f"constant properties: {', '.join(cov.get('constant', [])) or '-'}",
        f"unbound properties: {', '.join(cov.get('unbound', [])) or '-'}",
        f"unexplained cells: {cov.get('unexplained', []) or '-'}",
    ]
    return "\n".join(lines)


def cmd_extract(args) -> int:
    trace = tr.load(args.trace)
    config = replace(_DEFAULTS, lam=args.lam, theta=args.theta, max_cases=args.max_cases)
    if args.pool_hint:
        keep = set(json.loads(Path(args.pool_hint).read_text())["cells"])
        config = replace(config, exclude=frozenset(set(range(trace.ram_size)) - keep))
    model = extract_world_model(trace, config, args.tolerance)
    model.save(args.out)
    print(_coverage_report(model))
    missing = uncovered_properties(model)
    if missing:
        print(f"no rule chain for: {', '.join(missing)}", file=sys.stderr)
        return 1
    return 0


def cmd_refine(args) -> int:
    if not args.env:
        raise UsageError("refine needs --env: interventions run in a live environment")
    env = _env(args.env)
    model = CausalWorldModel.load(args.model)
    if model.env != env.name:
        raise UsageError(f"model is for {model.env}, not {env.name}")
    if args.trace:
        trace = tr.load(args.trace)
    else:
        trace = tr.sample(_env(args.env), tr.RandomPolicy(args.seed, env.actions), args.steps, args.seed)
    model, report = refine_model(env, model, trace, trials=args.trials, seed=args.seed)
    model.save(args.out)
    for r in report.rules:
        verdicts = " ".join(f"s{v.candidate}:{v.verdict}" for v in r.verdicts)
        print(f"s{r.target:<3} {r.action:<20} {r.status:<14} {r.accuracy_before:.4f} -> {r.accuracy_after:.4f}  {verdicts}")
    return 0


def cmd_annotate(args) -> int:
    model = CausalWorldModel.load(args.model)
    if args.mode == "heuristic":
        labels = ann.heuristic_annotate(model)
    else:
        if not args.endpoint:
            raise UsageError("--mode llm needs --endpoint")
        config = ann.LLMConfig(args.endpoint, args.llm_model, args.timeout)
        labels = ann.llm_annotate(model, config)
    ann.apply_annotations(model, labels)
    model.save(args.out or args.model)
    for c, a in sorted(model.annotations.items()):
        print(f"s{c:<3} {a['label']}  [{a['source']}]")
    if args.hint_out:
        keep = sorted(c for c, a in model.annotations.items() if a["label"] != "constant")
        Path(args.hint_out).write_text(json.dumps({"cells": keep}) + "\n")
    return 0


def cmd_eval(args) -> int:
    model = CausalWorldModel.load(args.model)
    trace = tr.load(args.trace)
    acc = prediction_accuracy(model, trace)
    print(f"{'cell':<6}{'status':<15}{'accuracy':>9}")
    for c, a in acc.items():
        print(f"s{c:<5}{model.rules[c].status:<15}{a:>9.4f}")
    other = [k for k in range(model.ram_size) if k not in model.rules]
    changing = [k for k in other if not np.array_equal(trace.states_before[:, k], trace.states_after[:, k])]
    print(f"unmodeled: {len(other)} cells; changing in this trace: {changing or '-'}")
    return 0


def model_to_dot(model: CausalWorldModel) -> str:
    """Property nodes plus one node per modeled cell; bound cells light, the rest dark."""
    bound = set(model.bound_cells)
    lines = ["digraph world_model {", "  rankdir=LR;"]
    for b in model.bindings:
        lines.append(f'  "{b.label}" [shape=box, style=filled, fillcolor=white];')
    for c in sorted(model.rules):
        shade = "lightblue" if c in bound else "steelblue"
        style = "light" if c in bound else "dark"
        lines.append(f'  "s{c}" [style=filled, fillcolor={shade}, class={style}];')
    for b in model.bindings:
        if b.cell in model.rules:
            lines.append(f'  "s{b.cell}" -> "{b.label}" [style=dashed];')
    for src, dst in model.edges:
        if src.startswith("s"):
            lines.append(f'  "{src}" -> "s{dst}";')
    lines.append("}")
    return "\n".join(lines) + "\n"


def cmd_export(args) -> int:
    model = CausalWorldModel.load(args.model)
    if args.format == "dot":
        _out(model_to_dot(model), args.out)
    else:
        _out(json.dumps(model.to_doc(), indent=1) + "\n", args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="comet", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("sample", help="roll out a policy and write a trace")
    s.add_argument("--env", required=True, help=f"one of {', '.join(ENVIRONMENTS)}")
    s.add_argument("--steps", type=int, default=5000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--policy", default="random", help="random[:SEED] | scripted:A,B,.. | replay")
    s.add_argument("--replay", help="trace whose actions the replay policy repeats")
    s.add_argument("--detector", choices=("oracle", "blob"), default="oracle")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sample)

    e = sub.add_parser("extract", help="fit a causal world model to a trace")
    e.add_argument("--trace", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--lambda", dest="lam", type=float, default=_DEFAULTS.lam)
    e.add_argument("--theta", type=float, default=_DEFAULTS.theta)
    e.add_argument("--max-cases", type=int, default=_DEFAULTS.max_cases)
    e.add_argument("--tolerance", type=float, default=0.0, help="binding mismatch fraction allowed")
    e.add_argument("--pool-hint", help='JSON {"cells": [...]} restricting regression variables')
    e.set_defaults(func=cmd_extract)

    r = sub.add_parser("refine", help="test rule inputs by intervention and repair rules")
    r.add_argument("--model", required=True)
    r.add_argument("--env")
    r.add_argument("--trials", type=int, default=20)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--trace", help="trace to draw trial states and refit rows from")
    r.add_argument("--steps", type=int, default=5000, help="length of the fresh trace sampled without --trace")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_refine)

    a = sub.add_parser("annotate", help="label modeled cells")
    a.add_argument("--model", required=True)
    a.add_argument("--mode", choices=("heuristic", "llm"), default="heuristic")
    a.add_argument("--endpoint", help="chat-completion URL for --mode llm")
    a.add_argument("--llm-model", default="gpt-4o")
    a.add_argument("--timeout", type=float, default=30.0)
    a.add_argument("--hint-out", help="write the non-constant cells as a variable-pool hint")
    a.add_argument("--out")
    a.set_defaults(func=cmd_annotate)

    v = sub.add_parser("eval", help="per-cell one-step accuracy on a trace")
    v.add_argument("--model", required=True)
    v.add_argument("--trace", required=True)
    v.set_defaults(func=cmd_eval)

    x = sub.add_parser("export", help="write a model as dot or json")
    x.add_argument("--model", required=True)
    x.add_argument("--format", choices=("dot", "json"), default="dot")
    x.add_argument("--out")
    x.set_defaults(func=cmd_export)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"comet: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, KeyError, RuntimeError) as exc:
        print(f"comet: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
