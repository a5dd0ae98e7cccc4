"""Rollout sampling and line-delimited trace persistence.

File layout, one JSON object per line::

    {"kind": "header", "format": 1, "env": ..., "ram_size": ..., "actions": [...],
     "seed": ..., "policy": ..., "detector": ...}
    {"t": 0, "a": 1, "r": 0, "done": false, "s": [...], "objs": [...]}
    ...
    {"kind": "terminal", "s": [...]}

A step's next state is the following line's ``s``; steps that end an episode
carry it explicitly as ``s_after`` because the next line starts a new episode.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from comet.detect import Tracker, detect
from comet.envs import ENVIRONMENTS, IndexOutOfRange, ObjectState, RamEnv
from comet.symreg import Rows

log = logging.getLogger(__name__)

FORMAT_VERSION = 1


class FormatError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


# ---------------------------------------------------------------------------
# Policies
# ---------------------------------------------------------------------------


class RandomPolicy:
    def __init__(self, seed: int, actions=(0, 1, 2)):
        self.seed = seed
        self.actions = tuple(actions)
        self.rng = np.random.default_rng(seed)

    @property
    def descriptor(self) -> str:
        return f"random:{self.seed}"

    def __call__(self, state, t: int) -> int:
        return self.actions[int(self.rng.integers(len(self.actions)))]


class ScriptedPolicy:
    def __init__(self, script):
        self.script = [int(a) for a in script]
        if not self.script:
            raise ValueError("scripted policy needs at least one action")

    @property
    def descriptor(self) -> str:
        return "scripted:" + ",".join(map(str, self.script))

    def __call__(self, state, t: int) -> int:
        return self.script[t % len(self.script)]


class ReplayPolicy:
    def __init__(self, trace: "Trace"):
        self.actions = [int(a) for a in trace.actions]

    descriptor = "replay"

    def __call__(self, state, t: int) -> int:
        if t >= len(self.actions):
            raise IndexError(f"replay trace has only {len(self.actions)} actions")
        return self.actions[t]


def parse_policy(text: str, seed: int = 0, actions=(0, 1, 2), trace: "Trace | None" = None):
    """``random``, ``random:SEED``, ``scripted:1,1,0,2`` or ``replay`` (needs ``trace``)."""
    kind, _, arg = text.partition(":")
    if kind == "random":
        return RandomPolicy(int(arg) if arg else seed, actions)
    if kind == "scripted":
        try:
            script = [int(a) for a in arg.split(",") if a.strip()]
        except ValueError:
            raise ValueError(f"bad scripted policy {text!r}") from None
        bad = [a for a in script if a not in actions]
        if bad:
            raise ValueError(f"scripted policy uses actions {bad} outside {tuple(actions)}")
        return ScriptedPolicy(script)
    if kind == "replay":
        if trace is None:
            raise ValueError("replay policy needs a trace")
        return ReplayPolicy(trace)
    raise ValueError(f"unknown policy {text!r}")


# ---------------------------------------------------------------------------
# Traces
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Transition:
    t: int
    state_before: np.ndarray
    action: int
    state_after: np.ndarray
    objects_before: list
    reward: int
    done: bool


@dataclass
class Trace:
    env: str
    ram_size: int
    actions_set: tuple[int, ...]
    seed: int
    policy: str
    states_before: np.ndarray  # (n, ram_size) uint8
    states_after: np.ndarray
    actions: np.ndarray  # (n,)
    rewards: np.ndarray
    dones: np.ndarray
    objects: list = field(default_factory=list)  # per step list of ObjectState
    detector: str = "oracle"
    unknown_env: bool = False

    def __post_init__(self):
        if len(self.actions) == 0:
            raise ValueError("a trace needs at least one transition")

    def __len__(self):
        return len(self.actions)

    def __getitem__(self, t: int) -> Transition:
        return Transition(
            t, self.states_before[t], int(self.actions[t]), self.states_after[t],
            self.objects[t] if self.objects else [], int(self.rewards[t]), bool(self.dones[t]),
        )

    def __iter__(self):
        return (self[t] for t in range(len(self)))

    def __eq__(self, other):
        if not isinstance(other, Trace):
            return NotImplemented
        meta = ("env", "ram_size", "actions_set", "seed", "policy", "objects", "detector")
        arrays = ("states_before", "states_after", "actions", "rewards", "dones")
        return all(getattr(self, m) == getattr(other, m) for m in meta) and all(
            np.array_equal(getattr(self, a), getattr(other, a)) for a in arrays
        )

    def slice(self, start: int, stop: int) -> "Trace":
        return Trace(
            self.env, self.ram_size, self.actions_set, self.seed, self.policy,
            self.states_before[start:stop], self.states_after[start:stop], self.actions[start:stop],
            self.rewards[start:stop], self.dones[start:stop],
            self.objects[start:stop] if self.objects else [], self.detector, self.unknown_env,
        )


def sample(env: RamEnv, policy, n_steps: int, seed: int = 0, detector: str = "oracle") -> Trace:
    """Roll ``policy`` for exactly ``n_steps`` steps, resetting after terminal steps."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    if detector not in ("oracle", "blob"):
        raise ValueError(f"unknown detector {detector!r}")
    state = env.reset(seed)
    tracker = Tracker.for_env(env)
    before, after, acts, rews, dones, objs = [], [], [], [], [], []
    episode = 0
    for t in range(n_steps):
        if detector == "oracle":
            seen = env.oracle_objects(state)
        else:
            seen = tracker.update(detect(env.render(state), env.palette))
        action = int(policy(state, t))
        rec = env.step(action)
        before.append(state)
        after.append(rec.state_after)
        acts.append(action)
        rews.append(rec.reward)
        dones.append(rec.done)
        objs.append(seen)
        state = rec.state_after
        if rec.done:
            episode += 1
            state = env.reset(seed + episode)
            tracker = Tracker.for_env(env)
    return Trace(
        env.name, env.ram_size, tuple(env.actions), seed, getattr(policy, "descriptor", "custom"),
        np.array(before, dtype=np.uint8), np.array(after, dtype=np.uint8), np.array(acts, dtype=np.int64),
        np.array(rews, dtype=np.int64), np.array(dones, dtype=bool), objs, detector,
    )


def columns(trace: Trace, target: int) -> Rows:
    if not 0 <= target < trace.ram_size:
        raise IndexOutOfRange(f"cell {target} outside [0, {trace.ram_size})")
    return Rows(
        trace.states_before, trace.actions, trace.states_after[:, target],
        action_set=tuple(trace.actions_set), target=target,
    )


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def save(trace: Trace, path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        header = {
            "kind": "header", "format": FORMAT_VERSION, "env": trace.env, "ram_size": trace.ram_size,
            "actions": list(trace.actions_set), "seed": trace.seed, "policy": trace.policy,
            "detector": trace.detector,
        }
        fh.write(json.dumps(header) + "\n")
        n = len(trace)
        for t in range(n):
            rec = {
                "t": t, "a": int(trace.actions[t]), "r": int(trace.rewards[t]), "done": bool(trace.dones[t]),
                "s": trace.states_before[t].tolist(),
                "objs": [o.to_dict() for o in trace.objects[t]] if trace.objects else [],
            }
            chained = t + 1 < n and np.array_equal(trace.states_after[t], trace.states_before[t + 1])
            if trace.dones[t] or (t + 1 < n and not chained):
                rec["s_after"] = trace.states_after[t].tolist()
            fh.write(json.dumps(rec) + "\n")
        fh.write(json.dumps({"kind": "terminal", "s": trace.states_after[-1].tolist()}) + "\n")


def _state(value, ram_size, line):
    if not isinstance(value, list) or len(value) != ram_size:
        raise FormatError(f"state must be a list of {ram_size} integers", line)
    if not all(isinstance(v, int) and not isinstance(v, bool) and 0 <= v <= 255 for v in value):
        raise FormatError("state values must be integers in [0, 255]", line)
    return value


def load(path) -> Trace:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise FormatError("empty trace file", 1)
    records = []
    for no, text in enumerate(lines, start=1):
        try:
            rec = json.loads(text)
        except json.JSONDecodeError as exc:
            raise FormatError(f"malformed record ({exc.msg})", no) from None
        if not isinstance(rec, dict):
            raise FormatError("record is not an object", no)
        records.append((no, rec))
    no, head = records[0]
    if head.get("kind") != "header":
        raise FormatError("first record must be the header", no)
    if "format" not in head:
        raise FormatError("header lacks a format version", no)
    if head["format"] != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {head['format']!r}", no)
    try:
        env_name, ram_size = str(head["env"]), int(head["ram_size"])
        actions_set = tuple(int(a) for a in head["actions"])
    except (KeyError, TypeError, ValueError):
        raise FormatError("header lacks env, ram_size or actions", no) from None
    unknown = env_name not in ENVIRONMENTS
    if unknown:
        log.warning("trace env %r is not a bundled environment", env_name)

    if len(records) < 2:
        raise FormatError("trace has no steps", no + 1)
    last_no, last = records[-1]
    if last.get("kind") != "terminal":
        raise FormatError("missing terminal state record (truncated file?)", last_no + 1)
    terminal = _state(last.get("s"), ram_size, last_no)
    steps = records[1:-1]
    if not steps:
        raise FormatError("trace has no steps", last_no)

    before, after_explicit, acts, rews, dones, objs = [], [], [], [], [], []
    for i, (no, rec) in enumerate(steps):
        if rec.get("kind", "step") != "step":
            raise FormatError(f"unexpected {rec.get('kind')!r} record", no)
        try:
            if rec["t"] != i:
                raise FormatError(f"step index {rec['t']} out of sequence (expected {i})", no)
            a = rec["a"]
            if a not in actions_set:
                raise FormatError(f"action {a!r} not in the action set", no)
            before.append(_state(rec["s"], ram_size, no))
            after_explicit.append(_state(rec["s_after"], ram_size, no) if "s_after" in rec else None)
            acts.append(int(a))
            rews.append(int(rec["r"]))
            dones.append(bool(rec["done"]))
            objs.append([ObjectState.from_dict(d) for d in rec.get("objs", [])])
        except KeyError as exc:
            raise FormatError(f"step record lacks field {exc.args[0]!r}", no) from None
        except (TypeError, ValueError) as exc:
            if isinstance(exc, FormatError):
                raise
            raise FormatError(f"bad step record ({exc})", no) from None
    after = []
    for i in range(len(steps)):
        if after_explicit[i] is not None:
            after.append(after_explicit[i])
        elif dones[i]:
            raise FormatError("terminal step lacks s_after", steps[i][0])
        else:
            after.append(before[i + 1] if i + 1 < len(steps) else terminal)
    if after_explicit[-1] is not None and after_explicit[-1] != terminal:
        raise FormatError("terminal record disagrees with the last step", last_no)
    has_objs = any(objs)
    return Trace(
        env_name, ram_size, actions_set, int(head.get("seed", 0)), str(head.get("policy", "")),
        np.array(before, dtype=np.uint8), np.array(after, dtype=np.uint8), np.array(acts, dtype=np.int64),
        np.array(rews, dtype=np.int64), np.array(dones, dtype=bool), objs if has_objs else [],
        str(head.get("detector", "oracle")), unknown,
    )
