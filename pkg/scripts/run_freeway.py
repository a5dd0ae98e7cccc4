"""Extract and refine a MiniFreeway world model; report counters and car gates.

    python3 scripts/run_freeway.py --steps 1000 --seed 7 --out runs/minifreeway
"""

import argparse
import time
from pathlib import Path

from comet.annotate import apply_annotations, heuristic_annotate
from comet.cli import model_to_dot
from comet.envs import make_env
from comet.intervene import refine_model
from comet.pipeline import extract_world_model, prediction_accuracy
from comet.trace import RandomPolicy, sample


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--heldout-seed", type=int, default=99)
    ap.add_argument("--out", default="runs/minifreeway")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    env = make_env("minifreeway")
    trace = sample(env, RandomPolicy(args.seed), args.steps, args.seed)
    held = sample(env, RandomPolicy(args.heldout_seed), 1000, args.heldout_seed)

    t0 = time.perf_counter()
    model = extract_world_model(trace)
    print(f"extracted in {time.perf_counter() - t0:.1f} s with {model.fit_calls} fit calls")
    print(f"  hidden cells {model.hidden_cells}")
    for car in range(1, 11):
        print(f"  car {car:<2} {model.rules[car].ruleset.sexpr()}")
    model.save(out / "extracted.json")

    t0 = time.perf_counter()
    refined, report = refine_model(env, model, trace)
    print(f"refined in {time.perf_counter() - t0:.1f} s over {report.rounds} rounds")
    apply_annotations(refined, heuristic_annotate(refined))
    refined.save(out / "refined.json")
    (out / "refined.dot").write_text(model_to_dot(refined))

    acc = prediction_accuracy(refined, held)
    for c in refined.modeled_cells:
        print(f"  s{c:<3}{refined.annotations[c]['label']:<28}{refined.rules[c].status:<15}{acc[c]:.4f}")


if __name__ == "__main__":
    main()
