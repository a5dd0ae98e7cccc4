"""Human-readable labels for modeled cells, offline or from a chat-completion service."""

from __future__ import annotations

import json
import logging
import os
import re
import socket
import urllib.error
import urllib.request
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from comet.expr import Add, Const, Var, infix
from comet.pipeline import Batch, CausalWorldModel, PropertyBinding
from comet.symreg import RuleSet

log = logging.getLogger(__name__)

KEY_ENV = "COMET_LLM_KEY"
SOURCES = ("heuristic", "llm")
_LINE = re.compile(r"^\s*s(\d+)\s*:\s*(\S.*?)\s*$")


class UnmodeledCell(KeyError):
    pass


class MissingCredential(RuntimeError):
    pass


class NetworkError(RuntimeError):
    pass


class AnnotationParseError(ValueError):
    def __init__(self, message: str, raw: str):
        super().__init__(message)
        self.raw = raw


@dataclass(frozen=True)
class Annotation:
    cell: int
    label: str
    source: str = "heuristic"
    confidence: str = "high"

    def __post_init__(self):
        if not self.label.strip():
            raise ValueError("empty label")
        if self.source not in SOURCES:
            raise ValueError(f"unknown source {self.source!r}")
        if self.confidence not in ("high", "low"):
            raise ValueError(f"unknown confidence {self.confidence!r}")

    def to_doc(self) -> dict:
        return {"label": self.label, "source": self.source, "confidence": self.confidence}

    @classmethod
    def from_doc(cls, cell: int, d: dict) -> "Annotation":
        return cls(int(cell), d["label"], d.get("source", "heuristic"), d.get("confidence", "high"))


@dataclass(frozen=True)
class PromptBundle:
    cells: tuple[int, ...]
    equations: tuple[str, ...]
    bindings: tuple[str, ...]
    text: str


def rule_lines(target: int, rs: RuleSet) -> list[str]:
    """``s3 = s3 + s5``; cased rules get one line per case."""
    lhs = f"s{target} = "
    lines = [f"{lhs}{infix(e)} if {infix(p)}" for p, e in rs.cases]
    lines.append(lhs + infix(rs.default) + (" otherwise" if rs.cases else ""))
    return lines


def _readers(model: CausalWorldModel) -> dict[int, list[int]]:
    out: dict[int, list[int]] = {}
    for t in sorted(model.rules):
        for k in sorted(model.rules[t].inputs):
            if k != t:
                out.setdefault(k, []).append(t)
    return out


def _paths_to_bound(model: CausalWorldModel, cell: int) -> list[int]:
    """Cells on the shortest chains from ``cell`` to a bound cell.

    Chains follow readers first (whom this cell feeds), then inputs if no
    reader chain reaches a property.
    """
    bound = set(model.bound_cells)
    if cell in bound:
        return [cell]
    readers = _readers(model)
    inputs = {t: sorted(r.inputs - {t}) for t, r in model.rules.items()}
    for nbrs in (lambda c: readers.get(c, []), lambda c: inputs.get(c, [])):
        parent = {cell: None}
        frontier = [cell]
        hits: list[int] = []
        while frontier and not hits:
            nxt = []
            for c in frontier:
                for d in nbrs(c):
                    if d not in parent:
                        parent[d] = c
                        nxt.append(d)
            hits = [d for d in nxt if d in bound]
            frontier = nxt
        if hits:
            on_path = set()
            for h in hits:
                while h is not None:
                    on_path.add(h)
                    h = parent[h]
            return sorted(on_path)
    return [cell]


def build_prompt(model: CausalWorldModel, cell) -> PromptBundle:
    """Plain-text request for labels of one cell (or several, for a component)."""
    cells = (cell,) if isinstance(cell, (int, np.integer)) else tuple(cell)
    cells = tuple(sorted(int(c) for c in cells))
    for c in cells:
        if c not in model.rules:
            raise UnmodeledCell(f"cell {c} has no rule")
    chain = sorted(set(cells).union(*(_paths_to_bound(model, c) for c in cells)))
    equations = tuple(line for t in chain if t in model.rules for line in rule_lines(t, model.rules[t].ruleset))
    bindings = tuple(b.equation() for b in model.bindings)
    names = ", ".join(f"s{c}" for c in cells)
    parts = [
        f"The state of the game {model.env} is a vector of byte cells s0..s{model.ram_size - 1}.",
        "Object properties are read from cells as follows:",
        *(f"  {b}" for b in bindings),
        "Each step, cells update by these equations (cells not listed keep their value):",
        *(f"  {e}" for e in equations),
        f"What does each of {names} represent in the game?",
        "Answer with one line per cell in the form `sK: short label` and nothing else.",
    ]
    return PromptBundle(cells, equations, bindings, "\n".join(parts) + "\n")


# ---------------------------------------------------------------------------
# Offline heuristic
# ---------------------------------------------------------------------------


def _exprs(rs: RuleSet):
    for _, e in rs.cases:
        yield e, False
    yield rs.default, True


def _velocity_of(model: CausalWorldModel, cell: int, by_cell: dict[int, PropertyBinding]):
    for pos, b in sorted(by_cell.items()):
        if b.prop not in ("x", "y") or pos not in model.rules:
            continue
        for e, is_default in _exprs(model.rules[pos].ruleset):
            if isinstance(e, Add) and {e.l, e.r} == {Var(pos), Var(cell)}:
                axis = "vertical" if b.prop == "y" else "horizontal"
                return f"{b.object_name} {axis} velocity", "high" if is_default else "low"
    return None


def counter_period(rs: RuleSet, cell: int, ram_size: int) -> int | None:
    """Cycle length through 0 if the rule counts 0, 1, .., p-1 and resets to 0."""
    if set(rs_inputs(rs)) - {cell}:
        return None
    cells = np.zeros((1, ram_size), dtype=np.int64)
    seq = [0]
    for _ in range(256):
        cells[0, cell] = seq[-1]
        nxt = int(rs.predict(Batch(cells, np.zeros(1, dtype=np.int64)))[0])
        if nxt == 0:
            return len(seq) if seq == list(range(len(seq))) else None
        if nxt in seq:
            return None
        seq.append(nxt)
    return None


def rs_inputs(rs: RuleSet) -> set[int]:
    from comet.expr import actions_used, variables

    return set(variables(rs)) | ({-1} if actions_used(rs) else set())


def heuristic_annotate(model: CausalWorldModel) -> list[Annotation]:
    """Deterministic label for every modeled cell."""
    by_cell: dict[int, PropertyBinding] = {}
    for b in model.bindings:
        by_cell.setdefault(b.cell, b)
    out = []
    for cell in sorted(model.rules):
        rs = model.rules[cell].ruleset
        if cell in by_cell:
            out.append(Annotation(cell, by_cell[cell].label))
            continue
        vel = _velocity_of(model, cell, by_cell)
        if vel:
            out.append(Annotation(cell, vel[0], confidence=vel[1]))
            continue
        if not rs.cases and isinstance(rs.default, Const):
            out.append(Annotation(cell, "constant"))
            continue
        period = counter_period(rs, cell, model.ram_size)
        if period:
            out.append(Annotation(cell, f"frame counter (period {period})"))
            continue
        out.append(Annotation(cell, "auxiliary", confidence="low"))
    return out


def merge_annotations(current: dict[int, Annotation], new) -> dict[int, Annotation]:
    """New labels win, except that a heuristic label never replaces an llm one."""
    out = dict(current)
    for a in new:
        old = out.get(a.cell)
        if old is not None and old.source == "llm" and a.source != "llm":
            continue
        out[a.cell] = a
    return out


def model_annotations(model: CausalWorldModel) -> dict[int, Annotation]:
    return {c: Annotation.from_doc(c, d) for c, d in model.annotations.items()}


def apply_annotations(model: CausalWorldModel, new) -> CausalWorldModel:
    merged = merge_annotations(model_annotations(model), new)
    model.annotations = {c: a.to_doc() for c, a in sorted(merged.items())}
    return model


# ---------------------------------------------------------------------------
# Language-model service
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LLMConfig:
    endpoint: str
    model: str = "gpt-4o"
    timeout: float = 30.0
    retries: int = 1
    max_concurrency: int = 4


def parse_labels(raw: str, cells) -> list[Annotation]:
    wanted = set(cells)
    found = {}
    for line in raw.splitlines():
        m = _LINE.match(line.strip().strip("`"))
        if m and int(m.group(1)) in wanted:
            found.setdefault(int(m.group(1)), m.group(2))
    if not found:
        raise AnnotationParseError("no `sK: label` lines for the requested cells", raw)
    return [Annotation(c, label, "llm", "high") for c, label in sorted(found.items())]


def _post(config: LLMConfig, key: str, prompt: str) -> str:
    body = json.dumps(
        {"model": config.model, "messages": [{"role": "user", "content": prompt}]}
    ).encode()
    req = urllib.request.Request(
        config.endpoint,
        data=body,
        headers={"Content-Type": "application/json", "Authorization": f"Bearer {key}"},
        method="POST",
    )
    with urllib.request.urlopen(req, timeout=config.timeout) as resp:
        doc = json.loads(resp.read().decode())
    try:
        return doc["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError):
        raise AnnotationParseError("response is not a chat completion", json.dumps(doc)) from None


def _ask(config: LLMConfig, key: str, bundle: PromptBundle) -> list[Annotation]:
    attempts = config.retries + 1
    for attempt in range(attempts):
        last = attempt == attempts - 1
        try:
            raw = _post(config, key, bundle.text)
        except (urllib.error.URLError, socket.timeout, TimeoutError, ConnectionError, json.JSONDecodeError) as exc:
            if last:
                raise NetworkError(f"{config.endpoint}: {exc}") from exc
            log.warning("request for %s failed (%s); retrying", bundle.cells, exc)
            continue
        try:
            return parse_labels(raw, bundle.cells)
        except AnnotationParseError:
            if last:
                raise
            log.warning("unparseable reply for %s; retrying", bundle.cells)
    raise AssertionError("unreachable")


def components(model: CausalWorldModel, cells) -> list[tuple[int, ...]]:
    """Connected groups of ``cells`` under rule dependencies, ignoring direction."""
    cells = set(cells)
    adj: dict[int, set[int]] = {c: set() for c in cells}
    for t in cells:
        for k in model.rules[t].inputs & cells:
            if k != t:
                adj[t].add(k)
                adj[k].add(t)
    seen, out = set(), []
    for c in sorted(cells):
        if c in seen:
            continue
        group, todo = [], deque([c])
        seen.add(c)
        while todo:
            x = todo.popleft()
            group.append(x)
            for y in sorted(adj[x] - seen):
                seen.add(y)
                todo.append(y)
        out.append(tuple(sorted(group)))
    return out


def llm_annotate(model: CausalWorldModel, config: LLMConfig, cells=None) -> list[Annotation]:
    """Label cells through a chat-completion endpoint, one request per component.

    By default the cells are the modeled cells no property binds to and that
    have no llm label yet.
    """
    key = os.environ.get(KEY_ENV)
    if not key:
        raise MissingCredential(f"set {KEY_ENV} to use the language-model annotator")
    if cells is None:
        have = {c for c, a in model_annotations(model).items() if a.source == "llm"}
        cells = [c for c in model.hidden_cells if c not in have]
    for c in cells:
        if c not in model.rules:
            raise UnmodeledCell(f"cell {c} has no rule")
    groups = components(model, cells)
    if not groups:
        return []
    bundles = [build_prompt(model, g) for g in groups]
    with ThreadPoolExecutor(max_workers=max(1, config.max_concurrency)) as pool:
        results = list(pool.map(lambda b: _ask(config, key, b), bundles))
    return sorted((a for r in results for a in r), key=lambda a: a.cell)
