"""How the parsimony weight decides between the spurious and the true enemy rule.

For each lambda, fit the enemy paddle (cell 1) on one MiniPong trace and
report the chosen rule, its complexity, whether it reads the ball's vertical
velocity (cell 5) and its held-out accuracy.
"""

import argparse

from comet.envs import make_env
from comet.pipeline import find_hidden_state
from comet.symreg import SearchConfig
from comet.trace import RandomPolicy, columns, sample


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=5000)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--lambdas", default="0,0.001,0.003,0.01,0.03,0.1")
    args = ap.parse_args()

    env = make_env("minipong")
    trace = sample(env, RandomPolicy(args.seed), args.steps, args.seed)
    held = columns(sample(env, RandomPolicy(99), 1000, 99), 1)
    print(f"{'lambda':>8} {'cx':>4} {'s5':>3} {'held':>7}  rule")
    for lam in (float(x) for x in args.lambdas.split(",")):
        rule = find_hidden_state(trace, 1, SearchConfig(lam=lam))
        reads5 = "yes" if 5 in rule.inputs else "no"
        print(f"{lam:>8g} {rule.complexity:>4} {reads5:>3} {rule.ruleset.accuracy(held):>7.4f}  {rule.ruleset.sexpr()}")


if __name__ == "__main__":
    main()
