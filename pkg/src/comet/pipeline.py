"""Property binding, worklist closure and the executable world model."""

from __future__ import annotations

import json
from collections import deque
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from comet.expr import Var, actions_used, complexity, parse_expr, parse_pred, variables
from comet.symreg import (
    DegenerateSeries,
    NoRuleFound,
    RuleSet,
    SearchConfig,
    fit_affine,
    fit_ruleset,
)
from comet.trace import Trace, columns

MODEL_FORMAT = 1
STATUSES = ("regressed", "verified", "refuted-refit", "unexplained")
PROPERTIES = ("x", "y", "w", "h", "value")


class MissingRule(KeyError):
    pass


class ModelFormatError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Bindings
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PropertyBinding:
    category: str
    instance: int
    prop: str
    cell: int
    scale: int
    offset: int
    exact: bool
    alternates: tuple[int, ...] = ()
    mismatches: int = 0

    @property
    def object_name(self) -> str:
        return f"{self.category}{self.instance or ''}"

    @property
    def label(self) -> str:
        return f"{self.object_name}.{self.prop}"

    def equation(self) -> str:
        """E.g. ``Ball.y = s3 - 14``."""
        rhs = f"s{self.cell}" if self.scale == 1 else f"{self.scale}*s{self.cell}"
        if self.offset > 0:
            rhs += f" + {self.offset}"
        elif self.offset < 0:
            rhs += f" - {-self.offset}"
        return f"{self.label} = {rhs}"


@dataclass
class BindingScan:
    bindings: list[PropertyBinding] = field(default_factory=list)
    constant: list[str] = field(default_factory=list)  # property labels with a constant series
    unbound: list[str] = field(default_factory=list)  # non-constant properties with no cell fit


def _property_series(trace: Trace):
    """{(category, instance, prop): (step indices, values)} over visible frames."""
    series: dict[tuple, tuple[list, list]] = {}
    for t, objs in enumerate(trace.objects):
        for o in objs:
            if not o.visible:
                continue
            props = ("value",) if o.value is not None else ("x", "y", "w", "h")
            for p in props:
                steps, vals = series.setdefault((o.category, o.instance, p), ([], []))
                steps.append(t)
                vals.append(getattr(o, p))
    return series


def scan_properties(trace: Trace, tolerance: float = 0.0) -> BindingScan:
    """Affine-fit every non-constant visible property series against every cell.

    A fit counts when its mismatch fraction is at most ``tolerance`` (exactness
    by default). The lowest cell among the best fits is bound; the other
    equally good cells are kept as alternates.
    """
    if not trace.objects:
        raise ValueError("trace carries no detections")
    scan = BindingScan()
    cells = trace.states_before.astype(np.int64)
    order = {p: i for i, p in enumerate(PROPERTIES)}
    for (cat, inst, prop), (steps, vals) in sorted(
        _property_series(trace).items(), key=lambda kv: (kv[0][0], kv[0][1], order[kv[0][2]])
    ):
        name = f"{cat}{inst or ''}.{prop}"
        ys = np.asarray(vals, dtype=np.int64)
        if len(ys) < 2 or np.all(ys == ys[0]):
            scan.constant.append(name)
            continue
        fits = []
        for k in range(trace.ram_size):
            try:
                fit = fit_affine(cells[steps, k], ys, theta=1.0 - tolerance)
            except DegenerateSeries:
                continue
            if fit is not None:
                fits.append((fit.mismatches, k, fit))
        if not fits:
            scan.unbound.append(name)
            continue
        fits.sort(key=lambda f: (f[0], f[1]))
        best_m, cell, fit = fits[0]
        alts = tuple(k for m, k, f in fits[1:] if m == best_m and (f.scale, f.offset) == (fit.scale, fit.offset))
        scan.bindings.append(PropertyBinding(cat, inst, prop, cell, fit.scale, fit.offset, fit.exact, alts, fit.mismatches))
    return scan


def find_relevant_eis(trace: Trace, tolerance: float = 0.0) -> list[PropertyBinding]:
    return scan_properties(trace, tolerance).bindings


# ---------------------------------------------------------------------------
# Rules and the model
# ---------------------------------------------------------------------------


@dataclass
class UpdateRule:
    target: int
    ruleset: RuleSet
    status: str = "regressed"
    accuracy: float | None = None

    def __post_init__(self):
        if self.status not in STATUSES:
            raise ValueError(f"unknown status {self.status!r}")

    @property
    def inputs(self) -> frozenset[int]:
        return frozenset(variables(self.ruleset))

    @property
    def action_inputs(self) -> frozenset[int]:
        return frozenset(actions_used(self.ruleset))

    @property
    def complexity(self) -> int:
        return complexity(self.ruleset)


def ruleset_to_doc(rs: RuleSet) -> dict:
    return {"cases": [[p.sexpr(), e.sexpr()] for p, e in rs.cases], "default": rs.default.sexpr()}


def ruleset_from_doc(d: dict) -> RuleSet:
    return RuleSet(tuple((parse_pred(p), parse_expr(e)) for p, e in d["cases"]), parse_expr(d["default"]))


@dataclass
class CausalWorldModel:
    env: str
    ram_size: int
    actions: tuple[int, ...] = (0, 1, 2)
    bindings: list[PropertyBinding] = field(default_factory=list)
    rules: dict[int, UpdateRule] = field(default_factory=dict)
    annotations: dict[int, dict] = field(default_factory=dict)
    coverage: dict[str, list] = field(default_factory=lambda: {"constant": [], "unbound": [], "unexplained": []})
    fit_calls: int = 0

    @property
    def bound_cells(self) -> list[int]:
        return sorted({b.cell for b in self.bindings})

    @property
    def modeled_cells(self) -> list[int]:
        return sorted(self.rules)

    @property
    def hidden_cells(self) -> list[int]:
        """Modeled cells no property binds to."""
        return sorted(set(self.rules) - set(self.bound_cells))

    @property
    def edges(self) -> list[tuple[str, int]]:
        out = []
        for t in sorted(self.rules):
            rule = self.rules[t]
            out += [(f"s{k}", t) for k in sorted(rule.inputs)]
            out += [(f"a{a}", t) for a in sorted(rule.action_inputs)]
        return out

    def missing_inputs(self) -> list[int]:
        return sorted({k for r in self.rules.values() for k in r.inputs} - set(self.rules))

    def to_doc(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "env": self.env,
            "ram_size": self.ram_size,
            "actions": list(self.actions),
            "bindings": [
                {**asdict(b), "alternates": list(b.alternates)} for b in self.bindings
            ],
            "rules": [
                {
                    "target": t,
                    "status": r.status,
                    "accuracy": r.accuracy,
                    "rules": r.ruleset.sexpr(),
                    **ruleset_to_doc(r.ruleset),
                }
                for t, r in sorted(self.rules.items())
            ],
            "edges": [list(e) for e in self.edges],
            "annotations": {str(k): v for k, v in sorted(self.annotations.items())},
            "coverage": self.coverage,
            "fit_calls": self.fit_calls,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "CausalWorldModel":
        if not isinstance(doc, dict) or "format" not in doc:
            raise ModelFormatError("model document lacks a format version")
        if doc["format"] != MODEL_FORMAT:
            raise ModelFormatError(f"unsupported model format {doc['format']!r}")
        try:
            bindings = [
                PropertyBinding(**{**b, "alternates": tuple(b.get("alternates", ()))}) for b in doc.get("bindings", [])
            ]
            rules = {}
            for r in doc.get("rules", []):
                rules[int(r["target"])] = UpdateRule(int(r["target"]), ruleset_from_doc(r), r["status"], r.get("accuracy"))
            model = cls(
                doc["env"], int(doc["ram_size"]), tuple(doc.get("actions", (0, 1, 2))), bindings, rules,
                {int(k): v for k, v in doc.get("annotations", {}).items()},
                doc.get("coverage", {"constant": [], "unbound": [], "unexplained": []}),
                int(doc.get("fit_calls", 0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ModelFormatError(f"malformed model document: {exc}") from None
        stored = [tuple(e) for e in doc.get("edges", [])]
        if stored and stored != model.edges:
            raise ModelFormatError("stored edges disagree with the rules")
        return model

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_doc(), indent=1, sort_keys=False) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "CausalWorldModel":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ModelFormatError(f"model file is not valid JSON: {exc}") from None
        return cls.from_doc(doc)

    def __eq__(self, other):
        if not isinstance(other, CausalWorldModel):
            return NotImplemented
        return self.to_doc() == other.to_doc()


# ---------------------------------------------------------------------------
# Regression and closure
# ---------------------------------------------------------------------------


def find_hidden_state(trace: Trace, target: int, config: SearchConfig | None = None, extra_rows=None) -> UpdateRule:
    config = config or SearchConfig()
    rows = columns(trace, target)
    if extra_rows is not None and len(extra_rows):
        rows = concat_rows(rows, extra_rows)
    try:
        rs = fit_ruleset(rows, config, target)
    except NoRuleFound as exc:
        rs = exc.best
        return UpdateRule(target, rs, "unexplained", rs.accuracy(columns(trace, target)))
    return UpdateRule(target, rs, "regressed", rs.accuracy(columns(trace, target)))


def concat_rows(a, b):
    return type(a)(
        np.concatenate([a.cells, b.cells]), np.concatenate([a.actions, b.actions]),
        np.concatenate([a.labels, b.labels]), a.action_set, a.target,
    )


def close_model(model: CausalWorldModel, trace: Trace, config: SearchConfig, seeds=()) -> CausalWorldModel:
    """Worklist closure: fit every queued cell once, queue the cells its rule reads."""
    work = deque(sorted(set(seeds) | set(model.missing_inputs())))
    while work:
        cell = work.popleft()
        if cell in model.rules:
            continue
        rule = find_hidden_state(trace, cell, config)
        model.fit_calls += 1
        model.rules[cell] = rule
        for k in sorted(rule.inputs):
            if k not in model.rules and k not in work:
                work.append(k)
    _refresh_coverage(model)
    return model


def _refresh_coverage(model: CausalWorldModel) -> None:
    model.coverage["unexplained"] = sorted(t for t, r in model.rules.items() if r.status == "unexplained")


def extract_world_model(trace: Trace, config: SearchConfig | None = None, tolerance: float = 0.0) -> CausalWorldModel:
    config = config or SearchConfig()
    scan = scan_properties(trace, tolerance)
    model = CausalWorldModel(trace.env, trace.ram_size, tuple(trace.actions_set), scan.bindings)
    model.coverage = {"constant": scan.constant, "unbound": scan.unbound, "unexplained": []}
    return close_model(model, trace, config, seeds=model.bound_cells)


# ---------------------------------------------------------------------------
# Execution
# ---------------------------------------------------------------------------


def _check_executable(model: CausalWorldModel) -> None:
    missing = model.missing_inputs()
    if missing:
        raise MissingRule(f"cells {missing} are read by rules but have no rule")


def step_model(model: CausalWorldModel, state, action: int) -> np.ndarray:
    """Apply every rule simultaneously to one state; unmodeled cells hold."""
    cells = np.asarray(state, dtype=np.int64)[None, :]
    batch = Batch(cells, np.array([action], dtype=np.int64))
    nxt = cells[0].copy()
    for t, rule in model.rules.items():
        nxt[t] = int(rule.ruleset.predict(batch)[0])
    return nxt.astype(np.uint8)


@dataclass
class Batch:
    """Rows for vectorised rule evaluation."""

    cells: np.ndarray
    actions: np.ndarray


def simulate(model: CausalWorldModel, initial, actions) -> list[np.ndarray]:
    _check_executable(model)
    states = [np.asarray(initial, dtype=np.uint8).copy()]
    for a in actions:
        states.append(step_model(model, states[-1], int(a)))
    return states


def prediction_accuracy(model: CausalWorldModel, trace: Trace) -> dict[int, float]:
    if trace.ram_size != model.ram_size:
        raise ValueError("trace and model disagree on ram_size")
    out = {}
    for t, rule in sorted(model.rules.items()):
        out[t] = rule.ruleset.accuracy(columns(trace, t))
    return out


def hold_model(env: str, ram_size: int, cells) -> CausalWorldModel:
    """Model whose every listed cell keeps its value."""
    rules = {k: UpdateRule(k, RuleSet((), Var(k))) for k in cells}
    return CausalWorldModel(env, ram_size, rules=rules)


def with_rule(model: CausalWorldModel, rule: UpdateRule) -> CausalWorldModel:
    new = CausalWorldModel.from_doc(model.to_doc())
    new.rules[rule.target] = replace(rule)
    return new


def uncovered_properties(model: CausalWorldModel) -> list[str]:
    """Bound properties whose rule chain reaches a missing or unexplained rule."""
    out = []
    for b in model.bindings:
        seen, todo, ok = set(), [b.cell], True
        while todo:
            c = todo.pop()
            if c in seen:
                continue
            seen.add(c)
            rule = model.rules.get(c)
            if rule is None or rule.status == "unexplained":
                ok = False
                break
            todo.extend(rule.inputs)
        if not ok:
            out.append(b.label)
    return out
