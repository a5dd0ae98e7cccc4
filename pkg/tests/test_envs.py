import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from comet.envs import (
    EnvError,
    IndexOutOfRange,
    MiniFreeway,
    MiniPong,
    StaleToken,
    UnknownAction,
    UnknownEnvironment,
    make_env,
)
from comet.groundtruth import ground_truth_model
from comet.pipeline import step_model

ENVS = ["minipong", "minifreeway"]


@pytest.mark.parametrize("name", ENVS)
def test_reset_is_deterministic(name):
    a, b = make_env(name), make_env(name)
    assert np.array_equal(a.reset(3), b.reset(3))
    for act in [1, 2, 0, 1, 1]:
        assert np.array_equal(a.step(act).state_after, b.step(act).state_after)


@pytest.mark.parametrize("name", ENVS)
def test_snapshot_restore_replays(name):
    env = make_env(name)
    env.reset(1)
    token = env.snapshot()
    first = [env.step(a).state_after for a in (1, 2, 2, 0)]
    env.restore(token)
    second = [env.step(a).state_after for a in (1, 2, 2, 0)]
    assert all(np.array_equal(x, y) for x, y in zip(first, second))


def test_restore_rejects_foreign_token():
    a, b = make_env("minipong"), make_env("minipong")
    a.reset(0)
    b.reset(0)
    with pytest.raises(StaleToken):
        b.restore(a.snapshot())


def test_errors():
    env = make_env("minipong")
    with pytest.raises(EnvError):
        env.step(0)
    env.reset(0)
    with pytest.raises(UnknownAction):
        env.step(7)
    with pytest.raises(IndexOutOfRange):
        env.set_cell(32, 0)
    with pytest.raises(ValueError):
        env.set_cell(0, 256)
    with pytest.raises(UnknownEnvironment):
        make_env("nosuch")


def test_set_cell_takes_effect_next_step():
    env = make_env("minipong")
    env.reset(0)
    env.set_cell(5, 2)
    before = int(env.state()[3])
    assert int(env.step(0).state_after[3]) == (before + 2) % 256


def test_pong_layout():
    env = make_env("minipong")
    s = env.reset(0)
    objs = {o.key: o for o in env.oracle_objects()}
    assert objs[("Ball", 0)].y == int(s[3]) - 14
    assert objs[("Ball", 0)].x == int(s[2])
    assert objs[("Player", 0)].y == int(s[0])
    assert objs[("Enemy", 0)].y == int(s[1])
    assert objs[("PlayerScore", 0)].value == int(s[6])


def test_freeway_counter_gates_car():
    env = make_env("minifreeway")
    s = env.reset(0)
    # period 3 car 8: moves only when its counter reads 2
    env.set_cell(18, 2)
    x = int(s[8])
    after = env.step(0).state_after
    assert int(after[8]) == (x - 1) % 256 and int(after[18]) == 0
    x = int(after[8])
    after = env.step(0).state_after
    assert int(after[8]) == x and int(after[18]) == 1


def test_freeway_constant_cell():
    env = make_env("minifreeway")
    env.reset(4)
    for _ in range(50):
        assert int(env.step(1).state_after[21]) == 1


@pytest.mark.parametrize("name", ENVS)
def test_ground_truth_model_matches_environment(name):
    env = make_env(name)
    model = ground_truth_model(name)
    s = env.reset(5)
    rng = np.random.default_rng(5)
    for _ in range(400):
        a = int(rng.choice(env.actions))
        nxt = env.step(a).state_after
        assert np.array_equal(step_model(model, s, a), nxt)
        s = nxt


@settings(max_examples=300, deadline=None)
@given(st.sampled_from(ENVS), st.lists(st.integers(0, 255), min_size=32, max_size=32), st.integers(0, 2))
def test_ground_truth_on_arbitrary_states(name, cells, action):
    env = make_env(name)
    env.reset(0)
    for k, v in enumerate(cells):
        env.set_cell(k, v)
    nxt = env.step(action).state_after
    model = ground_truth_model(name)
    pred = step_model(model, np.array(cells), action)
    # constant cells are written as their one reachable value, which only
    # differs from the environment (which leaves them alone) off-trajectory
    dynamic = [k for k, r in model.rules.items() if r.inputs or r.action_inputs]
    assert np.array_equal(pred[dynamic], nxt[dynamic])


def test_metadata():
    meta = MiniFreeway().metadata()
    assert meta["ram_size"] == 32 and "Car10" in meta["roster"]
    assert MiniPong().metadata()["actions"] == {0: "NOOP", 1: "UP", 2: "DOWN"}
