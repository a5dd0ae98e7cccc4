import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from comet.envs import make_env
from comet.expr import Add, Const, Var
from comet.groundtruth import ground_truth_model
from comet.pipeline import (
    CausalWorldModel,
    MissingRule,
    ModelFormatError,
    PropertyBinding,
    UpdateRule,
    close_model,
    find_relevant_eis,
    hold_model,
    prediction_accuracy,
    scan_properties,
    simulate,
    uncovered_properties,
    with_rule,
)
from comet.symreg import RuleSet, SearchConfig
from comet.trace import RandomPolicy, sample

PONG_BINDINGS = {
    "Player.y": (0, 1, 0),
    "Enemy.y": (1, 1, 0),
    "Ball.x": (2, 1, 0),
    "Ball.y": (3, 1, -14),
    "PlayerScore.value": (6, 1, 0),
    "EnemyScore.value": (7, 1, 0),
}


def test_pong_bindings_exact(runs):
    got = {b.label: (b.cell, b.scale, b.offset) for b in find_relevant_eis(runs.trace("minipong"))}
    assert got == PONG_BINDINGS


def test_ball_y_equation(runs):
    ball_y = next(b for b in find_relevant_eis(runs.trace("minipong")) if b.label == "Ball.y")
    assert ball_y.equation() == "Ball.y = s3 - 14"
    assert ball_y.exact


def test_binding_equation_forms():
    assert PropertyBinding("Car", 3, "x", 4, 2, 5, True).equation() == "Car3.x = 2*s4 + 5"
    assert PropertyBinding("Ball", 0, "x", 2, 1, 0, True).equation() == "Ball.x = s2"


def test_freeway_cars_bound_and_lane_constants(runs):
    scan = scan_properties(runs.trace("minifreeway"))
    got = {b.label: b.cell for b in scan.bindings}
    assert got == {"Chicken.y": 0, **{f"Car{i}.x": i for i in range(1, 11)}}
    assert "Chicken.x" in scan.constant and "Car1.y" in scan.constant


def test_scan_needs_detections():
    tr = sample(make_env("minipong"), RandomPolicy(0), 10, 0)
    tr.objects = []
    with pytest.raises(ValueError):
        scan_properties(tr)


def test_pong_closure_finds_velocities(runs):
    model = runs.model("minipong")
    assert model.bound_cells == [0, 1, 2, 3, 6, 7]
    assert model.hidden_cells == [4, 5]
    assert model.missing_inputs() == []
    assert model.fit_calls == len(model.rules) <= 32


def test_freeway_closure_finds_counters(runs):
    model = runs.model("minifreeway")
    assert model.hidden_cells == list(range(11, 21))
    assert model.fit_calls <= 32


def test_closure_fits_each_cell_once():
    tr = sample(make_env("minipong"), RandomPolicy(4), 300, 4)
    model = CausalWorldModel("minipong", 32, rules={0: UpdateRule(0, RuleSet((), Add(Var(4), Var(5))))})
    close_model(model, tr, SearchConfig(max_expr_size=5, max_cases=1, beam_width=1, top_k_vars=6))
    assert {4, 5} <= set(model.rules)
    assert model.fit_calls == len(model.rules) - 1
    assert model.missing_inputs() == []


def test_model_roundtrip(tmp_path, runs):
    model = runs.model("minipong")
    path = tmp_path / "m.json"
    model.save(path)
    back = CausalWorldModel.load(path)
    assert back == model
    back.save(tmp_path / "n.json")
    assert path.read_bytes() == (tmp_path / "n.json").read_bytes()


def test_model_format_errors(tmp_path):
    path = tmp_path / "m.json"
    path.write_text("{not json")
    with pytest.raises(ModelFormatError):
        CausalWorldModel.load(path)
    with pytest.raises(ModelFormatError):
        CausalWorldModel.from_doc({"env": "minipong"})
    with pytest.raises(ModelFormatError):
        CausalWorldModel.from_doc({"format": 99})
    doc = hold_model("minipong", 32, [1]).to_doc()
    doc["edges"] = [["s9", 1]]
    with pytest.raises(ModelFormatError):
        CausalWorldModel.from_doc(doc)
    doc = hold_model("minipong", 32, [1]).to_doc()
    doc["rules"][0]["default"] = "(frob 1)"
    with pytest.raises(ModelFormatError):
        CausalWorldModel.from_doc(doc)


def test_bad_status():
    with pytest.raises(ValueError):
        UpdateRule(0, RuleSet((), Const(0)), "fitted")


def test_simulate_needs_closed_model():
    model = CausalWorldModel("minipong", 32, rules={0: UpdateRule(0, RuleSet((), Var(4)))})
    with pytest.raises(MissingRule):
        simulate(model, np.zeros(32, np.uint8), [0])


@pytest.mark.parametrize("env_name", ["minipong", "minifreeway"])
def test_ground_truth_simulation_matches_env(env_name):
    tr = sample(make_env(env_name), RandomPolicy(11), 400, 11)
    stop = int(np.argmax(tr.dones)) if tr.dones.any() else len(tr)
    states = simulate(ground_truth_model(env_name), tr.states_before[0], tr.actions[:stop])
    assert np.array_equal(np.array(states[1:]), tr.states_after[:stop])


def test_unmodeled_cells_hold():
    model = hold_model("minipong", 32, [2])
    model.rules[2] = UpdateRule(2, RuleSet((), Add(Var(2), Const(3))))
    out = simulate(model, np.arange(32, dtype=np.uint8), [0, 0])
    assert out[-1][2] == 8 and out[-1][5] == 5


def test_prediction_accuracy_of_ground_truth(runs):
    acc = prediction_accuracy(ground_truth_model("minipong", range(8)), runs.heldout("minipong"))
    assert all(v == 1.0 for v in acc.values())


def test_with_rule_does_not_alias():
    model = hold_model("minipong", 32, [1])
    new = with_rule(model, UpdateRule(1, RuleSet((), Const(5))))
    assert model.rules[1].ruleset.default == Var(1)
    assert new.rules[1].ruleset.default == Const(5)


def test_uncovered_properties():
    b = PropertyBinding("Ball", 0, "x", 2, 1, 0, True)
    model = CausalWorldModel("minipong", 32, bindings=[b], rules={2: UpdateRule(2, RuleSet((), Add(Var(2), Var(4))))})
    assert uncovered_properties(model) == ["Ball.x"]
    model.rules[4] = UpdateRule(4, RuleSet((), Var(4)), "unexplained")
    assert uncovered_properties(model) == ["Ball.x"]
    model.rules[4] = UpdateRule(4, RuleSet((), Var(4)))
    assert uncovered_properties(model) == []


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 255), min_size=32, max_size=32), st.lists(st.sampled_from([0, 1, 2]), max_size=20))
def test_simulate_is_deterministic_bytes(cells, actions):
    model = ground_truth_model("minifreeway")
    a = simulate(model, np.array(cells), actions)
    b = simulate(model, np.array(cells), actions)
    assert len(a) == len(actions) + 1
    assert all(x.dtype == np.uint8 and np.array_equal(x, y) for x, y in zip(a, b))


def test_model_doc_is_json(runs):
    doc = runs.model("minipong").to_doc()
    assert json.loads(json.dumps(doc)) == doc
