"""Extract, refine and annotate a MiniPong world model, then check it held out.

    python3 scripts/run_minipong.py --steps 5000 --seed 7 --out runs/minipong
"""

import argparse
import json
import time
from pathlib import Path

import numpy as np

from comet.annotate import apply_annotations, heuristic_annotate
from comet.cli import model_to_dot
from comet.envs import make_env
from comet.intervene import refine_model
from comet.pipeline import extract_world_model, prediction_accuracy, simulate
from comet.trace import RandomPolicy, sample, save


def rollout_agreement(model, trace):
    cells = model.modeled_cells
    agree = total = start = 0
    for stop in [i + 1 for i in np.flatnonzero(trace.dones)] + [len(trace)]:
        if stop > start:
            sim = np.array(simulate(model, trace.states_before[start], trace.actions[start:stop])[1:])
            agree += int((sim[:, cells] == trace.states_after[start:stop][:, cells]).sum())
            total += sim[:, cells].size
        start = stop
    return agree / total


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=5000)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--heldout-seed", type=int, default=99)
    ap.add_argument("--out", default="runs/minipong")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    env = make_env("minipong")
    trace = sample(env, RandomPolicy(args.seed), args.steps, args.seed)
    held = sample(env, RandomPolicy(args.heldout_seed), 1000, args.heldout_seed)
    save(trace, out / "trace.jsonl")

    t0 = time.perf_counter()
    model = extract_world_model(trace)
    t_extract = time.perf_counter() - t0
    model.save(out / "extracted.json")
    print(f"extracted in {t_extract:.1f} s: bound {model.bound_cells}, hidden {model.hidden_cells}")
    print(f"  enemy rule {model.rules[1].ruleset.sexpr()}  accuracy {model.rules[1].accuracy:.4f}")

    t0 = time.perf_counter()
    refined, report = refine_model(env, model, trace)
    t_refine = time.perf_counter() - t0
    apply_annotations(refined, heuristic_annotate(refined))
    refined.save(out / "refined.json")
    (out / "refinement.json").write_text(json.dumps(report.to_doc(), indent=1) + "\n")
    (out / "refined.dot").write_text(model_to_dot(refined))
    print(f"refined in {t_refine:.1f} s over {report.rounds} rounds")
    print(f"  enemy rule {refined.rules[1].ruleset.sexpr()}")

    before = prediction_accuracy(model, held)
    after = prediction_accuracy(refined, held)
    print("held-out one-step accuracy (extracted -> refined):")
    for c in refined.modeled_cells:
        label = refined.annotations[c]["label"]
        print(f"  s{c:<3}{label:<28}{before.get(c, float('nan')):.4f} -> {after[c]:.4f}")
    print(f"held-out rollout agreement: {rollout_agreement(refined, held):.4f}")


if __name__ == "__main__":
    main()
