import numpy as np
import pytest

from comet.envs import make_env
from comet.expr import Add, Const, Sub, Var
from comet.groundtruth import ground_truth_model
from comet.intervene import EnvUnavailable, InterventionLog, NotAnInput, check_binding, refine_model
from comet.intervene import test_dependency as check_dependency
from comet.pipeline import CausalWorldModel, PropertyBinding, UpdateRule, prediction_accuracy, with_rule
from comet.symreg import RuleSet
from comet.trace import RandomPolicy, sample


@pytest.fixture(scope="module")
def pong_gt():
    return ground_truth_model("minipong", range(8))


@pytest.fixture(scope="module")
def freeway_short():
    return sample(make_env("minifreeway"), RandomPolicy(2), 400, 2)


def test_true_dependency_confirmed(pong_gt):
    v = check_dependency(make_env("minipong"), pong_gt, 3, 5, trials=20, seed=1)
    assert v.verdict == "confirmed"
    assert v.trials == v.agreements == 20


def test_fake_dependency_refuted_and_inert():
    model = ground_truth_model("minifreeway")
    rule = model.rules[0].ruleset
    model = with_rule(model, UpdateRule(0, RuleSet(rule.cases, Sub(Add(rule.default, Var(21)), Const(1)))))
    v = check_dependency(make_env("minifreeway"), model, 0, 21, trials=20, seed=0)
    assert v.verdict == "refuted" and v.agreements == 0
    assert v.no_effect


def test_trials_are_logged_and_deterministic(pong_gt):
    log = InterventionLog()
    a = check_dependency(make_env("minipong"), pong_gt, 3, 5, trials=10, seed=4, log_to=log)
    b = check_dependency(make_env("minipong"), pong_gt, 3, 5, trials=10, seed=4)
    assert a == b
    rows = log.rows(3, (0, 1, 2))
    assert len(rows) == 10
    # every logged row is a real transition, so the true rule explains it
    assert pong_gt.rules[3].ruleset.accuracy(rows) == 1.0


def test_env_unavailable(pong_gt):
    with pytest.raises(EnvUnavailable):
        check_dependency(None, pong_gt, 3, 5)
    with pytest.raises(EnvUnavailable):
        refine_model(None, pong_gt, None)


def test_not_an_input(pong_gt):
    env = make_env("minipong")
    with pytest.raises(NotAnInput):
        check_dependency(env, pong_gt, 3, 0)
    with pytest.raises(NotAnInput):
        check_dependency(env, pong_gt, 20, 0)


def test_inert_input_demotes_to_constant(freeway_short):
    # cell 21 never changes; a rule deriving it from cell 0 is pure correlation
    model = CausalWorldModel("minifreeway", 32, rules={
        21: UpdateRule(21, RuleSet((), Sub(Var(0), Const(179)))),
        0: UpdateRule(0, RuleSet((), Var(0))),
    })
    refined, report = refine_model(make_env("minifreeway"), model, freeway_short, targets=[21], max_rounds=1)
    assert refined.rules[21].ruleset == RuleSet((), Const(1))
    assert report.for_target(21)[0].action == "demoted-to-constant"


def test_injected_constant_input_removed(runs):
    model = runs.model("minifreeway")
    rule = model.rules[0].ruleset
    bad = with_rule(model, UpdateRule(0, RuleSet(rule.cases, Sub(Add(rule.default, Var(21)), Const(1)))))
    refined, report = refine_model(make_env("minifreeway"), bad, runs.trace("minifreeway"), targets=[0], max_rounds=1)
    step = report.for_target(0)[0]
    assert [v.verdict for v in step.verdicts if v.candidate == 21] == ["refuted"]
    assert 21 not in refined.rules[0].inputs
    assert step.accuracy_after == step.accuracy_before


def test_pong_enemy_repaired(runs):
    refined, report = runs.refined("minipong")
    first = report.for_target(1)[0]
    five = next(v for v in first.verdicts if v.candidate == 5)
    assert five.verdict == "refuted" and five.trials <= 20
    assert 5 not in refined.rules[1].inputs
    assert refined.rules[1].status == "refuted-refit"
    assert prediction_accuracy(refined, runs.heldout("minipong"))[1] == 1.0


def test_refine_does_not_mutate_input(runs):
    model = runs.model("minipong")
    before = model.to_doc()
    runs.refined("minipong")
    assert model.to_doc() == before


def test_velocity_rules_end_fully_confirmed(runs):
    # the extracted velocity rules are bare holds; refinement adds the bounces
    refined, report = runs.refined("minipong")
    for cell in (4, 5):
        last = report.for_target(cell)[-1]
        assert last.action == "kept"
        assert {v.candidate for v in last.verdicts} == set(refined.rules[cell].inputs)
        assert all(v.verdict == "confirmed" for v in last.verdicts)
        assert refined.rules[cell].ruleset.cases
    assert prediction_accuracy(refined, runs.heldout("minipong"))[4] == 1.0


def test_report_doc(runs):
    _, report = runs.refined("minipong")
    doc = report.to_doc()
    assert doc["rounds"] >= 1
    assert {r["target"] for r in doc["rules"]} >= set(range(8))


def _ball_x(cell, alternates):
    return PropertyBinding("Ball", 0, "x", cell, 1, 0, True, alternates)


def test_binding_check_keeps_true_cell(runs):
    check = check_binding(make_env("minipong"), _ball_x(2, (4,)), trials=10, seed=0, trace=runs.heldout("minipong"))
    assert check.confirmed == (2,) and check.chosen == 2


def test_binding_check_rebinds_to_alternate(runs):
    check = check_binding(make_env("minipong"), _ball_x(4, (2,)), trials=10, seed=0, trace=runs.heldout("minipong"))
    assert check.confirmed == (2,) and check.chosen == 2


def test_refine_disambiguates_only_when_asked(runs):
    trace = runs.heldout("minipong")
    model = ground_truth_model("minipong", [2, 4])
    model.bindings = [_ball_x(4, (2,))]
    env = make_env("minipong")
    same, report = refine_model(env, model, trace, targets=[], max_rounds=1)
    assert same.bindings[0].cell == 4 and report.bindings == []
    fixed, report = refine_model(env, model, trace, targets=[], max_rounds=1, disambiguate_bindings=True)
    assert fixed.bindings[0].cell == 2 and fixed.bindings[0].alternates == (4,)
    assert report.to_doc()["bindings"][0]["chosen"] == 2
