"""Paired-trial interventions on state cells, and model repair from their verdicts.

A trial loads a state into the live environment, snapshots it, steps once to
get a baseline, then restores, overwrites one input cell and steps again. The
rule under test predicts what the intervened step should produce; if it is
right about the input, observation and prediction agree.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from comet.envs import RamEnv
from comet.expr import Const, Var
from comet.pipeline import (
    Batch,
    CausalWorldModel,
    PropertyBinding,
    UpdateRule,
    _refresh_coverage,
    close_model,
    find_hidden_state,
)
from comet.symreg import Rows, RuleSet, SearchConfig
from comet.trace import Trace, columns

log = logging.getLogger(__name__)

DELTAS = (1, -1, 2, -2, 4, -4)


class EnvUnavailable(RuntimeError):
    pass


class NotAnInput(ValueError):
    pass


@dataclass(frozen=True)
class DependencyVerdict:
    target: int
    candidate: int
    verdict: str
    trials: int
    agreements: int
    baseline_matches: int = 0
    invariance_trials: int = 0
    invariance_violations: int = 0

    @property
    def no_effect(self) -> bool:
        """The target never moved away from its unperturbed next value."""
        return self.trials > 0 and self.baseline_matches == self.trials


@dataclass
class InterventionLog:
    """Observed intervened transitions, usable as extra regression rows."""

    states: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    next_states: list = field(default_factory=list)

    def add(self, state, action, nxt):
        self.states.append(np.asarray(state, dtype=np.int64))
        self.actions.append(int(action))
        self.next_states.append(np.asarray(nxt, dtype=np.int64))

    def rows(self, target: int, action_set) -> Rows | None:
        if not self.states:
            return None
        nxt = np.array(self.next_states)
        return Rows(np.array(self.states), np.array(self.actions), nxt[:, target], tuple(action_set), target)

    def __len__(self):
        return len(self.states)


def _verdict(trials: int, agreements: int, min_trials: int) -> str:
    if trials >= min_trials and agreements == trials:
        return "confirmed"
    if trials >= min_trials and agreements == 0:
        return "refuted"
    return "inconclusive"


def _load_state(env: RamEnv, state, seed: int) -> None:
    env.reset(seed)
    for k, v in enumerate(np.asarray(state).tolist()):
        env.set_cell(k, int(v))


def _predict(ruleset: RuleSet, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
    return np.asarray(ruleset.predict(Batch(states.astype(np.int64), actions.astype(np.int64))))


def _start_states(env: RamEnv, trace: Trace | None, rng, n: int):
    """Candidate (state, action) pairs: trace rows, or short random walks from reset."""
    if trace is not None:
        return trace.states_before.astype(np.int64), trace.actions.copy()
    states, actions = [], []
    for _ in range(n):
        s = env.reset(int(rng.integers(1 << 31)))
        for _ in range(int(rng.integers(1, 51))):
            s = env.step(int(rng.choice(env.actions))).state_after
        states.append(s.astype(np.int64))
        actions.append(int(rng.choice(env.actions)))
    return np.array(states), np.array(actions)


def test_dependency(
    env: RamEnv | None,
    model: CausalWorldModel,
    target: int,
    candidate: int,
    trials: int = 20,
    seed: int = 0,
    trace: Trace | None = None,
    min_trials: int | None = None,
    deltas=DELTAS,
    log_to: InterventionLog | None = None,
    invariance_trials: int = 0,
) -> DependencyVerdict:
    """Does overwriting ``candidate`` change ``target`` the way its rule says?

    Trial states where no delta changes the rule's prediction carry no
    evidence; they are never used. States come from ``trace`` when given,
    otherwise from random walks of 1-50 steps after a reset.

    ``invariance_trials`` extra trials go to states where the rule claims the
    candidate does not matter (e.g. a case firing a constant). They do not
    enter the verdict; a violation means the rule is missing a dependency.
    """
    if env is None:
        raise EnvUnavailable("interventions need a live environment")
    if target not in model.rules:
        raise NotAnInput(f"cell {target} has no rule")
    rule = model.rules[target]
    if candidate not in rule.inputs:
        raise NotAnInput(f"cell {candidate} is not an input of the rule for cell {target}")
    min_trials = trials if min_trials is None else min_trials
    rng = np.random.default_rng(seed)
    states, actions = _start_states(env, trace, rng, max(4 * trials, 50))
    rs = rule.ruleset
    base_pred = _predict(rs, states, actions)
    # which deltas move the prediction, per state
    moves = []
    for d in deltas:
        alt = states.copy()
        alt[:, candidate] = (alt[:, candidate] + d) % 256
        moves.append(_predict(rs, alt, actions) != base_pred)
    moves = np.array(moves)  # (n_deltas, n_states)
    sensitive = np.flatnonzero(moves.any(axis=0))
    def trial(i, delta):
        state, action = states[i], int(actions[i])
        _load_state(env, state, int(rng.integers(1 << 31)))
        token = env.snapshot()
        baseline = int(env.step(action).state_after[target])
        env.restore(token)
        altered = state.copy()
        altered[candidate] = (altered[candidate] + delta) % 256
        env.set_cell(candidate, int(altered[candidate]))
        after = env.step(action).state_after
        if log_to is not None:
            log_to.add(altered, action, after)
        predicted = int(_predict(rs, altered[None, :], np.array([action]))[0])
        return int(after[target]), predicted, baseline

    n_trials = agreements = baseline_matches = 0
    if len(sensitive):
        picks = rng.choice(sensitive, size=trials, replace=len(sensitive) < trials)
        for i in picks:
            options = [d for d, m in zip(deltas, moves[:, i]) if m]
            observed, predicted, baseline = trial(i, options[int(rng.integers(len(options)))])
            n_trials += 1
            agreements += observed == predicted
            baseline_matches += observed == baseline
    inv_n = inv_bad = 0
    insensitive = np.flatnonzero(~moves.any(axis=0))
    if invariance_trials and len(insensitive):
        picks = rng.choice(insensitive, size=invariance_trials, replace=len(insensitive) < invariance_trials)
        for i in picks:
            observed, predicted, _ = trial(i, deltas[int(rng.integers(len(deltas)))])
            inv_n += 1
            inv_bad += observed != predicted
    return DependencyVerdict(
        target,
        candidate,
        _verdict(n_trials, agreements, min_trials),
        n_trials,
        agreements,
        baseline_matches,
        inv_n,
        inv_bad,
    )


@dataclass
class RuleRefinement:
    target: int
    verdicts: list[DependencyVerdict]
    action: str  # kept | refit | demoted-to-constant
    accuracy_before: float
    accuracy_after: float
    status: str
    before: str = ""
    after: str = ""


@dataclass(frozen=True)
class BindingCheck:
    label: str
    candidates: tuple[int, ...]
    confirmed: tuple[int, ...]
    chosen: int


def check_binding(
    env: RamEnv | None, binding: PropertyBinding, trials: int = 10, seed: int = 0, trace: Trace | None = None,
) -> BindingCheck:
    """Which of a binding's tied cells actually drives the property?

    Each candidate cell is overwritten in a live state and the object is read
    back; a candidate is confirmed when every trial with the object visible
    shows ``scale * cell + offset``. The bound cell is kept unless it fails
    and exactly one alternate is confirmed.
    """
    if env is None:
        raise EnvUnavailable("binding checks need a live environment")
    rng = np.random.default_rng(seed)
    states, _ = _start_states(env, trace, rng, trials)
    key = (binding.category, binding.instance)
    cands = (binding.cell,) + tuple(binding.alternates)
    confirmed = []
    for c in cands:
        seen = agree = 0
        for i in rng.choice(len(states), size=min(trials, len(states)), replace=False):
            value = (int(states[i][c]) + int(rng.choice(DELTAS))) % 256
            _load_state(env, states[i], seed)
            env.set_cell(c, value)
            obj = next((o for o in env.oracle_objects() if o.key == key and o.visible), None)
            if obj is None:
                continue
            seen += 1
            agree += getattr(obj, binding.prop) == binding.scale * value + binding.offset
        if seen and agree == seen:
            confirmed.append(c)
    chosen = binding.cell
    if binding.cell not in confirmed and len(confirmed) == 1:
        chosen = confirmed[0]
    return BindingCheck(binding.label, cands, tuple(confirmed), chosen)


@dataclass
class RefinementReport:
    rules: list[RuleRefinement] = field(default_factory=list)
    rounds: int = 0
    bindings: list[BindingCheck] = field(default_factory=list)

    def for_target(self, target: int) -> list[RuleRefinement]:
        return [r for r in self.rules if r.target == target]

    def to_doc(self) -> dict:
        return {
            "rounds": self.rounds,
            "bindings": [
                {"label": b.label, "candidates": list(b.candidates), "confirmed": list(b.confirmed), "chosen": b.chosen}
                for b in self.bindings
            ],
            "rules": [
                {
                    "target": r.target,
                    "action": r.action,
                    "status": r.status,
                    "accuracy_before": r.accuracy_before,
                    "accuracy_after": r.accuracy_after,
                    "before": r.before,
                    "after": r.after,
                    "verdicts": [
                        {"candidate": v.candidate, "verdict": v.verdict, "trials": v.trials, "agreements": v.agreements}
                        for v in r.verdicts
                    ],
                }
                for r in self.rules
            ],
        }


def _accuracy(rs: RuleSet, trace: Trace, target: int) -> float:
    return rs.accuracy(columns(trace, target))


def refine_model(
    env: RamEnv | None,
    model: CausalWorldModel,
    trace: Trace,
    config: SearchConfig | None = None,
    trials: int = 20,
    seed: int = 0,
    refit_lam: float = 0.0,
    max_rounds: int = 4,
    invariance_trials: int = 10,
    targets=None,
    disambiguate_bindings: bool = False,
) -> tuple[CausalWorldModel, RefinementReport]:
    """Test every rule input by intervention and repair what fails.

    * A refuted input is excluded from the rule's variable pool and the rule
      is refit, provided the intervention never moved the target at all. If
      it did, the input is real but the rule uses it wrongly; the rule is
      refit with the input kept. A rule whose only input is refuted and
      inert, and whose cell never changes in the trace, becomes a constant.
    * A rule none of whose inputs is refuted but which is not exact on the
      trace plus the intervention rows is refit as well: with its inputs
      vouched for, misses are unmodelled mechanism rather than noise.

    Refits use the trace rows together with the intervention rows collected
    for that cell, at parsimony weight ``refit_lam``. A refit is accepted only
    if it does not lower accuracy on ``trace``. Changed rules are retested in
    the next round; new input cells go through the closure first.
    ``targets`` limits the first round to those cells.

    With ``disambiguate_bindings``, bindings that tie with alternate cells are
    checked first and rebound to the alternate when only it is confirmed.
    """
    if env is None:
        raise EnvUnavailable("refinement needs a live environment")
    config = config or SearchConfig()
    refit_config = replace(config, lam=refit_lam)
    model = CausalWorldModel.from_doc(model.to_doc())
    report = RefinementReport()
    logs: dict[int, InterventionLog] = {}
    excluded: dict[int, set[int]] = {}
    sticky_refit: set[int] = set()
    pending = sorted(model.rules if targets is None else set(targets) & set(model.rules))
    rng = np.random.default_rng(seed)
    if disambiguate_bindings:
        for i, b in enumerate(model.bindings):
            if not b.alternates:
                continue
            check = check_binding(env, b, trials, int(rng.integers(1 << 31)), trace)
            report.bindings.append(check)
            if check.chosen != b.cell:
                rest = tuple(c for c in check.candidates if c != check.chosen)
                model.bindings[i] = replace(b, cell=check.chosen, alternates=rest)
        had = set(model.rules)
        close_model(model, trace, config, seeds=set(model.bound_cells) - had)
        pending = sorted(set(pending) | (set(model.rules) - had))
    for rnd in range(max_rounds):
        if not pending:
            break
        report.rounds = rnd + 1
        changed = []
        for t in pending:
            rule = model.rules[t]
            ilog = logs.setdefault(t, InterventionLog())
            verdicts = [
                test_dependency(
                    env, model, t, c, trials, int(rng.integers(1 << 31)), trace,
                    log_to=ilog, invariance_trials=invariance_trials,
                )
                for c in sorted(rule.inputs)
            ]
            refuted = {v.candidate for v in verdicts if v.verdict == "refuted"}
            # a refuted input that still moves the target is real but misused
            inert = {v.candidate for v in verdicts if v.verdict == "refuted" and v.no_effect}
            for v in verdicts:
                if v.verdict == "inconclusive":
                    log.warning("cell %d: dependency on s%d inconclusive (%d/%d)", t, v.candidate, v.agreements, v.trials)
            before = _accuracy(rule.ruleset, trace, t)
            extra = ilog.rows(t, trace.actions_set)
            new_rule, action = rule, "kept"
            if refuted:
                excluded.setdefault(t, set()).update(inert)
                labels = trace.states_after[:, t]
                if inert == set(rule.inputs) and np.all(labels == labels[0]):
                    new_rule = UpdateRule(t, RuleSet((), Const(int(labels[0]))))
                    action = "demoted-to-constant"
                else:
                    cfg = replace(refit_config, exclude=frozenset(config.exclude | excluded.get(t, set())))
                    new_rule = find_hidden_state(trace, t, cfg, extra_rows=extra)
                    action = "refit"
                sticky_refit.add(t)
            else:
                exact_rows = columns(trace, t)
                acc_all = rule.ruleset.accuracy(exact_rows) if extra is None else _joint_accuracy(rule.ruleset, exact_rows, extra)
                if acc_all < 1.0:
                    cfg = replace(refit_config, exclude=frozenset(config.exclude | excluded.get(t, set())))
                    cand = find_hidden_state(trace, t, cfg, extra_rows=extra)
                    if cand.ruleset != rule.ruleset and cand.status != "unexplained":
                        new_rule, action = cand, "refit"
            after = _accuracy(new_rule.ruleset, trace, t)
            if after < before:
                # a repair may never cost accuracy on the trace
                new_rule, action, after = rule, "kept", before
                status = "unexplained"
            elif new_rule.status == "unexplained":
                status = "unexplained"
            elif refuted or t in sticky_refit:
                status = "refuted-refit"
            else:
                status = "verified"
            new_rule = replace(new_rule, status=status)
            new_rule.accuracy = after
            model.rules[t] = new_rule
            report.rules.append(
                RuleRefinement(t, verdicts, action, before, after, new_rule.status, rule.ruleset.sexpr(), new_rule.ruleset.sexpr())
            )
            if action != "kept":
                changed.append(t)
        fresh = set(model.missing_inputs())
        if fresh:
            close_model(model, trace, config)
            changed.extend(sorted(fresh))
        pending = sorted(set(changed))
    _refresh_coverage(model)
    return model, report


def _joint_accuracy(rs: RuleSet, a: Rows, b: Rows) -> float:
    hits = (rs.predict(a) == a.labels).sum() + (rs.predict(b) == b.labels).sum()
    return float(hits) / (len(a) + len(b))
