import json
import logging

import numpy as np
import pytest

from comet.envs import IndexOutOfRange, make_env
from comet.trace import FormatError, RandomPolicy, ScriptedPolicy, columns, load, parse_policy, sample, save


@pytest.fixture
def pong_trace():
    return sample(make_env("minipong"), RandomPolicy(1), 300, 1)


def test_sample_length_and_chaining(pong_trace):
    tr = pong_trace
    assert len(tr) == 300
    assert tr.states_before.shape == (300, 32)
    chained = ~tr.dones[:-1]
    assert np.array_equal(tr.states_after[:-1][chained], tr.states_before[1:][chained])


def test_sample_is_deterministic(pong_trace):
    assert sample(make_env("minipong"), RandomPolicy(1), 300, 1) == pong_trace


def test_policies():
    assert parse_policy("random:4").descriptor == "random:4"
    assert parse_policy("scripted:1,2")(None, 3) == 2
    with pytest.raises(ValueError):
        parse_policy("scripted:1,9")
    with pytest.raises(ValueError):
        parse_policy("replay")
    with pytest.raises(ValueError):
        parse_policy("greedy")


def test_replay_reproduces_actions(pong_trace):
    again = sample(make_env("minipong"), parse_policy("replay", trace=pong_trace), 300, 1)
    assert np.array_equal(again.states_before, pong_trace.states_before)
    assert np.array_equal(again.actions, pong_trace.actions)
    assert again.policy == "replay"


def test_scripted_policy_drives_actions():
    tr = sample(make_env("minifreeway"), ScriptedPolicy([1, 1, 0]), 9, 0)
    assert tr.actions.tolist() == [1, 1, 0] * 3


def test_bad_step_count():
    with pytest.raises(ValueError):
        sample(make_env("minipong"), RandomPolicy(0), 0)


@pytest.mark.parametrize("env_name", ["minipong", "minifreeway"])
def test_save_load_roundtrip(tmp_path, env_name):
    tr = sample(make_env(env_name), RandomPolicy(2), 400, 2, detector="blob")
    save(tr, tmp_path / "t.jsonl")
    back = load(tmp_path / "t.jsonl")
    assert back == tr
    save(back, tmp_path / "u.jsonl")
    assert (tmp_path / "t.jsonl").read_bytes() == (tmp_path / "u.jsonl").read_bytes()


def test_roundtrip_across_episode_ends(tmp_path, pong_trace):
    # splice an episode boundary: step 100 ends, step 101 starts from a fresh reset
    tr = pong_trace.slice(0, 300)
    tr.dones = tr.dones.copy()
    tr.states_before = tr.states_before.copy()
    tr.dones[100] = True
    tr.states_before[101] = make_env("minipong").reset(5)
    save(tr, tmp_path / "t.jsonl")
    assert load(tmp_path / "t.jsonl") == tr


def _lines(path):
    return path.read_text().splitlines()


def _write(path, lines):
    path.write_text("\n".join(lines) + "\n")


@pytest.fixture
def saved(tmp_path, pong_trace):
    path = tmp_path / "t.jsonl"
    save(pong_trace.slice(0, 5), path)
    return path


def test_truncated_file(saved):
    lines = _lines(saved)
    _write(saved, lines[:-1])
    with pytest.raises(FormatError) as info:
        load(saved)
    assert info.value.line == len(lines)


def test_malformed_line_number(saved):
    lines = _lines(saved)
    lines[3] = lines[3][:-5]
    _write(saved, lines)
    with pytest.raises(FormatError) as info:
        load(saved)
    assert info.value.line == 4
    assert "line 4" in str(info.value)


def test_missing_format_version(saved):
    lines = _lines(saved)
    head = json.loads(lines[0])
    del head["format"]
    _write(saved, [json.dumps(head)] + lines[1:])
    with pytest.raises(FormatError) as info:
        load(saved)
    assert info.value.line == 1


def test_out_of_range_byte(saved):
    lines = _lines(saved)
    rec = json.loads(lines[2])
    rec["s"][0] = 256
    lines[2] = json.dumps(rec)
    _write(saved, lines)
    with pytest.raises(FormatError) as info:
        load(saved)
    assert info.value.line == 3


def test_empty_file(tmp_path):
    (tmp_path / "e.jsonl").write_text("")
    with pytest.raises(FormatError):
        load(tmp_path / "e.jsonl")


def test_unknown_env_loads_with_warning(saved, caplog):
    lines = _lines(saved)
    head = json.loads(lines[0])
    head["env"] = "mystery"
    _write(saved, [json.dumps(head)] + lines[1:])
    caplog.set_level(logging.WARNING, logger="comet")
    tr = load(saved)
    assert tr.unknown_env and tr.env == "mystery"
    assert "mystery" in caplog.text


def test_columns(pong_trace):
    rows = columns(pong_trace, 3)
    assert np.array_equal(rows.labels, pong_trace.states_after[:, 3])
    with pytest.raises(IndexOutOfRange):
        columns(pong_trace, 32)
