"""Enumerative symbolic regression over byte-valued state transitions.

Three searches live here:

* ``fit_affine`` binds an observed property series to a cell series.
* ``search_equations`` enumerates the integer expression grammar and returns
  the Pareto front over (error, complexity).
* ``search_predicate`` / ``fit_ruleset`` learn update conditions and assemble
  ordered (condition, equation) cases with a default.

The grammar is linear over at most two distinct cells, so every expression
denotes ``a*x + b*y + c*act + offset (mod 256)``. Expression shapes are
enumerated once over placeholder leaves, keeping the cheapest tree for each
coefficient vector; data only decides which placeholders are bound to which
cells and what the additive offset is. Offsets are fitted (the residual mode)
rather than enumerated.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import rankdata

from comet.expr import (
    AbsDiffLt,
    Act,
    ActEq,
    Add,
    Always,
    And,
    Const,
    ConstLtVar,
    MulConst,
    Neg,
    Never,
    Sub,
    Var,
    VarEqConst,
    VarLtConst,
    VarLtVar,
    complexity,
    eval_expr,
    eval_pred,
    infix,
    ParseError,
    expr_from_tree,
    node_key,
    pred_from_tree,
    read_sexpr,
    variables,
)


class DegenerateSeries(ValueError):
    pass


class NoRuleFound(RuntimeError):
    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


@dataclass(frozen=True)
class SearchConfig:
    max_expr_size: int = 7
    top_k_vars: int = 8
    lam: float = 0.01
    theta: float = 0.98
    max_cases: int = 3
    beam_width: int = 3
    # rows scored in the enumeration pass; survivors are rescored on every row
    sample_rows: int = 256
    shortlist: int = 16
    max_near_const: int = 64
    exclude: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if min(self.max_expr_size, self.top_k_vars, self.max_cases, self.beam_width, self.sample_rows, self.shortlist) <= 0:
            raise ValueError("search caps must be positive")
        if not (self.lam >= 0 and 0 < self.theta <= 1):
            raise ValueError("need lam >= 0 and 0 < theta <= 1")
        object.__setattr__(self, "exclude", frozenset(self.exclude))


@dataclass(frozen=True)
class Rows:
    """Regression rows: previous cells, action taken, next value of one cell."""

    cells: np.ndarray
    actions: np.ndarray
    labels: np.ndarray
    action_set: tuple[int, ...] = (0, 1, 2)
    target: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "cells", np.asarray(self.cells, dtype=np.int64))
        object.__setattr__(self, "actions", np.asarray(self.actions, dtype=np.int64))
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.int64))

    def __len__(self):
        return len(self.labels)

    def take(self, idx) -> "Rows":
        return replace(self, cells=self.cells[idx], actions=self.actions[idx], labels=self.labels[idx])

    def action_features(self) -> np.ndarray:
        return np.stack([(self.actions == a).astype(np.int64) for a in self.action_set], axis=1)


# ---------------------------------------------------------------------------
# Affine binding
# ---------------------------------------------------------------------------

AFFINE_SCALES = (1, -1, 2, -2)


@dataclass(frozen=True)
class AffineFit:
    scale: int
    offset: int
    exact: bool
    mismatches: int


def fit_affine(xs, ys, theta: float = 0.98) -> AffineFit | None:
    xs = np.asarray(xs, dtype=np.int64)
    ys = np.asarray(ys, dtype=np.int64)
    if len(xs) != len(ys) or len(xs) < 2:
        raise ValueError("need two equal-length series of length >= 2")
    if np.all(xs == xs[0]):
        raise DegenerateSeries("cell series is constant")
    best = None
    for scale in AFFINE_SCALES:
        offsets, counts = np.unique(ys - scale * xs, return_counts=True)
        i = int(np.argmax(counts))  # first max: smallest offset among ties
        if best is None or counts[i] > best[2]:
            best = (scale, int(offsets[i]), int(counts[i]))
    scale, offset, hits = best
    if hits < theta * len(xs):
        return None
    return AffineFit(scale, offset, hits == len(xs), len(xs) - hits)


# ---------------------------------------------------------------------------
# Expression shapes over placeholder leaves
# ---------------------------------------------------------------------------

_X, _Y, _A = Var(-1), Var(-2), Act(-1)
_MUL_COEFS = (-4, -3, -2, 2, 3, 4)


@dataclass(frozen=True)
class Shape:
    coefs: tuple[int, int, int]  # coefficients of (x, y, act) mod 256
    size: int
    cx: int
    tree: object


@functools.lru_cache(maxsize=8)
def shapes(max_size: int) -> tuple[Shape, ...]:
    """Cheapest trees per linear form, Pareto-pruned in (size, complexity).

    Trees containing the action placeholder may contain at most one cell
    placeholder.
    """
    tables: list[dict] = [dict()]
    for s in range(1, max_size + 1):
        table: dict[tuple, tuple] = {}

        def put(form, cx, tree):
            if form[0] == 0 and form[1] == 0 and form[2] == 0:
                return
            if form[2] and form[0] and form[1]:
                return
            cur = table.get(form)
            if cur is None or (cx, _shape_key(tree)) < (cur[0], _shape_key(cur[1])):
                table[form] = (cx, tree)

        if s == 1:
            put((1, 0, 0), 2, _X)
            put((0, 1, 0), 2, _Y)
            put((0, 0, 1), 2, _A)
        else:
            for form, (cx, tree) in tables[s - 1].items():
                put(tuple((-v) % 256 for v in form), cx + 1, Neg(tree))
                for k in _MUL_COEFS:
                    put(tuple((k * v) % 256 for v in form), cx + 1, MulConst(k, tree))
            for s1 in range(1, s - 1):
                s2 = s - 1 - s1
                for f1, (c1, t1) in tables[s1].items():
                    for f2, (c2, t2) in tables[s2].items():
                        put(tuple((a + b) % 256 for a, b in zip(f1, f2)), c1 + c2 + 1, Add(t1, t2))
                        put(tuple((a - b) % 256 for a, b in zip(f1, f2)), c1 + c2 + 1, Sub(t1, t2))
        # drop entries dominated by a smaller tree of the same form
        best_so_far: dict[tuple, int] = {}
        for prev in tables[1:]:
            for form, (cx, _) in prev.items():
                best_so_far[form] = min(best_so_far.get(form, 1 << 30), cx)
        tables.append({f: v for f, v in table.items() if best_so_far.get(f, 1 << 30) > v[0]})
    out = []
    for s, table in enumerate(tables):
        for form, (cx, tree) in table.items():
            out.append(Shape(form, s, cx, tree))
    out.sort(key=lambda sh: (sh.size, sh.cx, _shape_key(sh.tree)))
    return tuple(out)


def _shape_key(tree):
    # order placeholders as x < y so bound trees read (add x y) for x < y
    return node_key(_bind(tree, 0, 1, 0))


def _bind(tree, x: int | None, y: int | None, a: int | None):
    if tree == _X:
        return Var(x)
    if tree == _Y:
        return Var(y)
    if tree == _A:
        return Act(a)
    if isinstance(tree, Neg):
        return Neg(_bind(tree.child, x, y, a))
    if isinstance(tree, MulConst):
        return MulConst(tree.c, _bind(tree.child, x, y, a))
    if isinstance(tree, (Add, Sub)):
        return type(tree)(_bind(tree.l, x, y, a), _bind(tree.r, x, y, a))
    return tree


def with_offset(term, offset: int):
    offset %= 256
    if offset == 0:
        return term
    if offset <= 128:
        return Add(term, Const(offset))
    return Sub(term, Const(256 - offset))


def const_minus(offset: int, term):
    offset %= 256
    return Sub(Const(offset if offset <= 128 else offset - 256), term)


# ---------------------------------------------------------------------------
# Variable prefilter
# ---------------------------------------------------------------------------


def _signed(v):
    return ((np.asarray(v) + 128) % 256) - 128


def _abs_rank_corr(columns: np.ndarray, label: np.ndarray) -> np.ndarray:
    rc = rankdata(columns, axis=0)
    rl = rankdata(label)
    rc = rc - rc.mean(axis=0)
    rl = rl - rl.mean()
    denom = np.sqrt((rc**2).sum(axis=0) * (rl**2).sum())
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.abs((rc * rl[:, None]).sum(axis=0) / denom)
    return np.nan_to_num(r)


def _delta(rows: Rows, target: int | None) -> np.ndarray:
    if target is None:
        return rows.labels
    return _signed(rows.labels - rows.cells[:, target])


def candidate_vars(rows: Rows, config: SearchConfig, target: int | None = None) -> list[int]:
    """Top-k cells by rank correlation with the label or with its change; target always kept."""
    n_cells = rows.cells.shape[1]
    score = _abs_rank_corr(rows.cells, rows.labels)
    if target is not None:
        score = np.maximum(score, _abs_rank_corr(rows.cells, _delta(rows, target)))
    order = sorted(
        (k for k in range(n_cells) if k != target and k not in config.exclude),
        key=lambda k: (-round(float(score[k]), 12), k),
    )
    pool = set(order[: config.top_k_vars])
    if target is not None and target not in config.exclude:
        pool.add(target)
    return sorted(pool)


def _mutual_information(x: np.ndarray, y: np.ndarray) -> float:
    _, xi = np.unique(x, return_inverse=True)
    _, yi = np.unique(y, return_inverse=True)
    joint = np.zeros((xi.max() + 1, yi.max() + 1))
    np.add.at(joint, (xi, yi), 1)
    joint /= joint.sum()
    px = joint.sum(axis=1, keepdims=True)
    py = joint.sum(axis=0, keepdims=True)
    nz = joint > 0
    return float((joint[nz] * np.log(joint[nz] / (px @ py)[nz])).sum())


def predicate_vars(rows: Rows, config: SearchConfig, target: int | None, eq_pool) -> list[int]:
    delta = _delta(rows, target)
    n_cells = rows.cells.shape[1]
    mi = {k: _mutual_information(rows.cells[:, k], delta) for k in range(n_cells) if k not in config.exclude}
    order = sorted(mi, key=lambda k: (-round(mi[k], 12), k))
    return sorted(set(eq_pool) | set(order[: config.top_k_vars]))


# ---------------------------------------------------------------------------
# Equation search
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Candidate:
    expr: object
    correct: int
    n: int
    complexity: int

    @property
    def accuracy(self) -> float:
        return self.correct / self.n if self.n else 0.0

    def objective(self, lam: float) -> float:
        return (1.0 - self.accuracy) + lam * self.complexity


def _mode_counts(resid: np.ndarray):
    """Per-row mode of a (F, n) byte matrix: (value, count), smallest value on ties."""
    f, n = resid.shape
    flat = resid.astype(np.intp)
    flat += (np.arange(f, dtype=np.intp) * 256)[:, None]
    counts = np.bincount(flat.ravel(), minlength=f * 256).reshape(f, 256)
    mode = counts.argmax(axis=1)
    return mode, counts[np.arange(f), mode]


@dataclass
class _Entries:
    """Scored candidates from one enumeration pass, kept as parallel arrays."""

    correct: list = field(default_factory=list)
    cx: list = field(default_factory=list)
    build: list = field(default_factory=list)  # (shape index, x, y, a, kind, offset)

    def extend(self, correct, cx, shape_idx, x, y, a, kind, offsets):
        self.correct.append(np.asarray(correct, dtype=np.int64))
        self.cx.append(np.asarray(cx, dtype=np.int64))
        k = len(shape_idx)
        self.build.append((np.asarray(shape_idx), np.full(k, -9 if x is None else x), np.full(k, -9 if y is None else y),
                           np.full(k, -9 if a is None else a), np.full(k, kind), np.asarray(offsets)))

    def arrays(self):
        if not self.correct:
            z = np.zeros(0, dtype=np.int64)
            return z, z, [z] * 6
        cols = [np.concatenate([b[i] for b in self.build]) for i in range(6)]
        return np.concatenate(self.correct), np.concatenate(self.cx), cols


_PLAIN, _OFFSET, _RSUB, _CONST = 0, 1, 2, 3


def _build(shape_tab, sidx, x, y, a, kind, offset):
    if kind == _CONST:
        return Const(int(offset))
    tree = _bind(shape_tab[sidx].tree, None if x < 0 else int(x), None if y < 0 else int(y), None if a < 0 else int(a))
    if kind == _OFFSET:
        return with_offset(tree, int(offset))
    if kind == _RSUB:
        return const_minus(int(offset), tree)
    return tree


def _enumerate(rows: Rows, pool: list[int], config: SearchConfig) -> _Entries:
    S = config.max_expr_size
    tab = shapes(S)
    coefs = np.array([sh.coefs for sh in tab], dtype=np.int64).reshape(-1, 3)
    sizes = np.array([sh.size for sh in tab])
    cxs = np.array([sh.cx for sh in tab])
    a_, b_, c_ = coefs[:, 0], coefs[:, 1], coefs[:, 2]
    groups = {
        "single": np.flatnonzero((a_ != 0) & (b_ == 0) & (c_ == 0)),
        "single_act": np.flatnonzero((a_ != 0) & (b_ == 0) & (c_ != 0)),
        "pair": np.flatnonzero((a_ != 0) & (b_ != 0) & (c_ == 0)),
        "act": np.flatnonzero((a_ == 0) & (b_ == 0) & (c_ != 0)),
    }
    y = rows.labels
    n = len(y)
    out = _Entries()

    vals, counts = np.unique(y, return_counts=True)
    out.extend([counts.max()], [1], [0], None, None, None, _CONST, [vals[counts.argmax()]])

    # uint8 arithmetic wraps mod 256 for free
    a8, b8, c8 = (v.astype(np.uint8) for v in (a_, b_, c_))
    y8 = y.astype(np.uint8)
    cells8 = rows.cells.astype(np.uint8)
    acts8 = {act: (rows.actions == act).astype(np.uint8) for act in rows.action_set}

    # a narrow accumulator makes the row sums several times faster
    acc = np.uint16 if n < 1 << 16 else np.int64

    def score(idx, xv, yv, av, x, yk, a):
        if len(idx) == 0:
            return
        t = np.multiply.outer(a8[idx], xv)
        if yv is not None:
            t += np.multiply.outer(b8[idx], yv)
        if av is not None:
            t += np.multiply.outer(c8[idx], av)
        hits = (t == y8).view(np.uint8).sum(axis=1, dtype=acc)
        out.extend(hits, cxs[idx], idx, x, yk, a, _PLAIN, np.zeros(len(idx), dtype=np.int64))
        small = sizes[idx] <= S - 2
        if small.any():
            ts, sidx = t[small], idx[small]
            off, cnt = _mode_counts(y8 - ts)
            out.extend(cnt, cxs[sidx] + 2, sidx, x, yk, a, _OFFSET, off)
            off, cnt = _mode_counts(y8 + ts)
            out.extend(cnt, cxs[sidx] + 2, sidx, x, yk, a, _RSUB, off)

    zeros = np.zeros(n, dtype=np.uint8)
    for act in rows.action_set:
        score(groups["act"], zeros, None, acts8[act], None, None, act)
    for i in pool:
        xv = cells8[:, i]
        score(groups["single"], xv, None, None, i, None, None)
        for act in rows.action_set:
            score(groups["single_act"], xv, None, acts8[act], i, None, act)
    for p, i in enumerate(pool):
        for j in pool[p + 1 :]:
            score(groups["pair"], cells8[:, i], cells8[:, j], None, i, j, None)
    return out


def _tie_key(e, target) -> tuple:
    """Among equally good candidates prefer ones that read the target cell itself.

    Cells that move in lockstep (counters started together, say) make
    ``s12 + 1`` and ``s11 + 38`` indistinguishable on data; persistence is
    the better bet.
    """
    return (_reads_other(e, target), node_key(e))


def _reads_other(node, target) -> bool:
    return target is not None and target not in variables(node)


def _front_from(correct, cx, exprs_for, n, target=None) -> list[Candidate]:
    """Pareto sweep over (error, complexity); one representative per point."""
    front = []
    best = -1
    for level in np.unique(cx):
        at = np.flatnonzero(cx == level)
        top = correct[at].max()
        if top <= best:
            continue
        ties = at[correct[at] == top]
        exprs = exprs_for(ties)
        rep = min(exprs, key=lambda e: _tie_key(e, target))
        front.append(Candidate(rep, int(top), n, int(level)))
        best = top
    return front


def search_equations(rows: Rows, config: SearchConfig | None = None, pool: list[int] | None = None) -> list[Candidate]:
    """Pareto front of grammar expressions over (1 - accuracy, complexity), by complexity."""
    config = config or SearchConfig()
    if len(rows) < 1:
        raise ValueError("need at least one row")
    if pool is None:
        pool = candidate_vars(rows, config, rows.target)
    pool = [k for k in pool if k not in config.exclude]
    tab = shapes(config.max_expr_size)
    n = len(rows)
    if n <= config.sample_rows:
        correct, cx, cols = _enumerate(rows, pool, config).arrays()

        def exprs_for(ix):
            return [_build(tab, *(c[i] for c in cols)) for i in ix[:4096]]

        return _front_from(correct, cx, exprs_for, n, rows.target)

    sample = rows.take(np.linspace(0, n - 1, config.sample_rows).round().astype(int))
    correct, cx, cols = _enumerate(sample, pool, config).arrays()
    keep = []
    for level in np.unique(cx):
        at = np.flatnonzero(cx == level)
        order = at[np.lexsort((at, -correct[at]))]
        keep.extend(order[: config.shortlist])
    seen = {}
    for i in keep:
        kind = cols[4][i]
        if kind in (_OFFSET, _RSUB, _CONST):
            term = _build(tab, *(c[i] for c in cols[:4]), _PLAIN, 0)
            expr = _refit_offset(term, kind, rows)
        else:
            expr = _build(tab, *(c[i] for c in cols))
        if expr not in seen:
            seen[expr] = int((eval_expr(expr, rows) == rows.labels).sum())
    exprs = list(seen)
    correct = np.array([seen[e] for e in exprs])
    cx = np.array([complexity(e) for e in exprs])
    return _front_from(correct, cx, lambda ix: [exprs[i] for i in ix], n, rows.target)


def _refit_offset(term, kind, rows: Rows):
    if kind == _CONST:
        vals, counts = np.unique(rows.labels, return_counts=True)
        return Const(int(vals[counts.argmax()]))
    if kind == _OFFSET:
        resid = (rows.labels - eval_expr(term, rows)) % 256
        return with_offset(term, int(np.bincount(resid, minlength=256).argmax()))
    resid = (rows.labels + eval_expr(term, rows)) % 256
    return const_minus(int(np.bincount(resid, minlength=256).argmax()), term)


# ---------------------------------------------------------------------------
# Predicate search
# ---------------------------------------------------------------------------


def to_bits(mask) -> int:
    mask = np.asarray(mask, dtype=bool)
    return int.from_bytes(np.packbits(mask, bitorder="little").tobytes(), "little")


def from_bits(bits: int, n: int) -> np.ndarray:
    raw = bits.to_bytes((n + 7) // 8, "little")
    return np.unpackbits(np.frombuffer(raw, dtype=np.uint8), bitorder="little")[:n].astype(bool)


_PAIR_POOL = 400


class LiteralTable:
    """Every literal over a variable pool, as bitsets over a fixed row set."""

    def __init__(self, rows: Rows, pool: list[int], config: SearchConfig | None = None):
        config = config or SearchConfig()
        self.n = len(rows)
        self.all = (1 << self.n) - 1
        lits = [Always()]
        lits += [ActEq(a) for a in rows.action_set]
        for k in pool:
            values = np.unique(rows.cells[:, k])
            lits += [VarEqConst(k, int(v)) for v in values]
            lits += [VarLtConst(k, int(v)) for v in values[1:]]
            lits += [ConstLtVar(int(v), k) for v in values[:-1]]
        for k in pool:
            for j in pool:
                if k != j:
                    lits.append(VarLtVar(k, j))
        for p, k in enumerate(pool):
            for j in pool[p + 1 :]:
                diffs = np.unique(np.abs(rows.cells[:, k] - rows.cells[:, j]))
                lits += [AbsDiffLt(k, j, int(d) + 1) for d in diffs if d + 1 <= config.max_near_const]
        lits.sort(key=lambda p: (complexity(p), node_key(p)))
        seen = {}
        for lit in lits:
            b = to_bits(eval_pred(lit, rows))
            if b and b not in seen:
                seen[b] = lit
        self.literals = [(lit, b, complexity(lit), node_key(lit)) for b, lit in seen.items()]
        self.literals.sort(key=lambda t: (t[2], t[3]))

    def best_precise(self, pos: int, neg: int):
        """Literal or 2-conjunction firing on no ``neg`` row and on the most ``pos`` rows."""
        best = None  # (tp, cx, key, pred, bits)

        def better(tp, cx, key):
            return best is None or (-tp, cx, key) < (-best[0], best[1], best[2])

        pairable = {}
        for lit, b, cx, key in self.literals:
            tp = (b & pos).bit_count()
            if tp == 0:
                continue
            if b & neg:
                sig = (b & pos, b & neg)
                if sig not in pairable:
                    pairable[sig] = (tp, lit, b, cx, key)
            elif better(tp, cx, key):
                best = (tp, cx, key, lit, b)
        cands = sorted(pairable.items(), key=lambda kv: (-kv[1][0], kv[1][3], kv[1][4]))[:_PAIR_POOL]
        for i, ((p1, n1), (tp1, l1, b1, c1, k1)) in enumerate(cands):
            if best is not None and tp1 < best[0]:
                break
            for (p2, n2), (tp2, l2, b2, c2, k2) in cands[i + 1 :]:
                if best is not None and tp2 < best[0]:
                    break
                if n1 & n2:
                    continue
                tp = (p1 & p2).bit_count()
                cx = c1 + c2 + 1
                if tp == 0 or (best is not None and (-tp, cx) > (-best[0], best[1])):
                    continue
                a, b = (l1, l2) if k1 <= k2 else (l2, l1)
                pred = And(a, b)
                key = node_key(pred)
                if better(tp, cx, key):
                    best = (tp, cx, key, pred, b1 & b2)
        if best is None:
            return None
        return best[3], best[4], best[0]

    def best_f1(self, pos: int):
        """Literal or 2-conjunction maximising F1 against the ``pos`` labelling."""
        P = pos.bit_count()
        neg = self.all & ~pos
        cands = [(Never(), 0, 1, node_key(Never()))] + self.literals
        best = None  # (f1, cx, key, pred, tp, fp)

        def consider(pred, bits, cx, key):
            nonlocal best
            tp = (bits & pos).bit_count()
            fp = (bits & neg).bit_count()
            f1 = 2 * tp / (tp + fp + P) if (tp + fp + P) else 0.0
            if best is None or (-f1, cx, key) < (-best[0], best[1], best[2]):
                best = (f1, cx, key, pred, tp, fp)

        scored = []
        for lit, b, cx, key in cands:
            consider(lit, b, cx, key)
            tp = (b & pos).bit_count()
            if tp and (b & neg):
                scored.append((tp, lit, b, cx, key))
        scored.sort(key=lambda t: (-t[0], t[3], t[4]))
        scored = scored[:_PAIR_POOL]
        for i, (tp1, l1, b1, c1, k1) in enumerate(scored):
            if 2 * tp1 / (tp1 + P) < best[0]:
                break
            for tp2, l2, b2, c2, k2 in scored[i + 1 :]:
                if 2 * tp2 / (tp2 + P) < best[0]:
                    break
                a, b = (l1, l2) if k1 <= k2 else (l2, l1)
                pred = And(a, b)
                consider(pred, b1 & b2, c1 + c2 + 1, node_key(pred))
        f1, _, _, pred, tp, fp = best
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / P if P else 0.0
        return pred, precision, recall


def search_predicate(rows: Rows, positive_labels, config: SearchConfig | None = None, pool=None):
    """Best literal or 2-conjunction by F1; returns (predicate, precision, recall)."""
    config = config or SearchConfig()
    positive_labels = np.asarray(positive_labels, dtype=bool)
    if positive_labels.all() or not positive_labels.any():
        # degenerate labellings: Always / Never are exact
        pred = Always() if positive_labels.all() else Never()
        return pred, 1.0, 1.0
    if pool is None:
        pool = predicate_vars(rows, config, None, list(range(rows.cells.shape[1])))
    table = LiteralTable(rows, pool, config)
    return table.best_f1(to_bits(positive_labels))


# ---------------------------------------------------------------------------
# Rule sets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RuleSet:
    cases: tuple = ()
    default: object = None

    def predict(self, rows) -> np.ndarray:
        out = np.asarray(eval_expr(self.default, rows))
        for pred, expr in reversed(self.cases):
            out = np.where(eval_pred(pred, rows), eval_expr(expr, rows), out)
        return out

    def accuracy(self, rows: Rows) -> float:
        return float(np.mean(self.predict(rows) == rows.labels)) if len(rows) else 1.0

    def score(self, rows: Rows) -> tuple[float, int]:
        return self.accuracy(rows), complexity(self)

    def objective(self, rows: Rows, lam: float) -> float:
        acc, cx = self.score(rows)
        return (1.0 - acc) + lam * cx

    def sexpr(self) -> str:
        parts = [f"(case {p.sexpr()} {e.sexpr()})" for p, e in self.cases]
        parts.append(f"(default {self.default.sexpr()})")
        return "(rules " + " ".join(parts) + ")"

    def describe(self, target: int | None = None) -> str:
        lhs = f"s{target}' = " if target is not None else ""
        lines = [f"{lhs}{infix(e)} if {infix(p)}" for p, e in self.cases]
        lines.append(f"{lhs}{infix(self.default)}" + (" otherwise" if self.cases else ""))
        return "\n".join(lines)


def parse_rules(text: str) -> RuleSet:
    """Inverse of ``RuleSet.sexpr``."""
    tree = read_sexpr(text)
    if not isinstance(tree, list) or tree[:1] != ["rules"] or len(tree) < 2:
        raise ParseError(f"expected (rules ... (default E)), got {text!r}")
    *cases, last = tree[1:]
    if not (isinstance(last, list) and len(last) == 2 and last[0] == "default"):
        raise ParseError("rule set must end with (default E)")
    out = []
    for c in cases:
        if not (isinstance(c, list) and len(c) == 3 and c[0] == "case"):
            raise ParseError(f"bad case {c!r}")
        out.append((pred_from_tree(c[1]), expr_from_tree(c[2])))
    return RuleSet(tuple(out), expr_from_tree(last[1]))


def simplify(rs: RuleSet) -> RuleSet:
    """Same predictions, fewer nodes: an ``always`` case ends the list, and
    trailing cases that repeat the default are dropped."""
    cases = list(rs.cases)
    default = rs.default
    for i, (p, e) in enumerate(cases):
        if isinstance(p, Always):
            cases, default = cases[:i], e
            break
    while cases and cases[-1][1] == default:
        cases.pop()
    return RuleSet(tuple(cases), default)


def _sort_key(rs: RuleSet, rows: Rows, lam: float):
    acc, cx = rs.score(rows)
    return ((1.0 - acc) + lam * cx, cx, _reads_other(rs, rows.target), rs.sexpr())


class _Grower:
    def __init__(self, rows: Rows, config: SearchConfig, target, pool, front):
        self.rows, self.config, self.target, self.pool = rows, config, target, pool
        self.front = front
        self.n = len(rows)
        self.all = (1 << self.n) - 1
        self._ok = {}
        self._lits = None
        self._fronts = {}  # wrong-row bitset -> equation front on those rows

    @property
    def lits(self) -> LiteralTable:
        if self._lits is None:
            pvars = predicate_vars(self.rows, self.config, self.target, self.pool)
            self._lits = LiteralTable(self.rows, pvars, self.config)
        return self._lits

    def ok(self, expr) -> int:
        if expr not in self._ok:
            self._ok[expr] = to_bits(eval_expr(expr, self.rows) == self.rows.labels)
        return self._ok[expr]

    def _idx(self, bits: int) -> np.ndarray:
        return np.flatnonzero(from_bits(bits, self.n))

    def grow(self, default) -> list[RuleSet]:
        d_ok = self.ok(default)
        states = [((), self.all)]
        out = []
        for _ in range(self.config.max_cases):
            nxt = {}
            for cases, unc in states:
                wrong = unc & ~d_ok
                if not wrong:
                    continue
                if wrong not in self._fronts:
                    self._fronts[wrong] = search_equations(self.rows.take(self._idx(wrong)), self.config, self.pool)
                opts = []
                for cand in self._fronts[wrong]:
                    e = cand.expr
                    if e == default:
                        continue
                    e_ok = self.ok(e)
                    found = self.lits.best_precise(unc & e_ok & ~d_ok, unc & ~e_ok)
                    if found is None:
                        continue
                    pred, pbits, tp = found
                    opts.append(
                        ((-tp, complexity(pred) + complexity(e) + 1, _tie_key(e, self.target), node_key(pred)), pred, e, pbits)
                    )
                opts.sort(key=lambda o: o[0])
                for _, pred, e, pbits in opts[: self.config.beam_width]:
                    new = cases + ((pred, e),)
                    if new not in nxt:
                        nxt[new] = unc & ~pbits
            ranked = sorted(nxt.items(), key=lambda kv: self._state_rank(kv[0], kv[1], d_ok))
            states = ranked[: self.config.beam_width]
            out.extend(self.finish(cases, unc, default) for cases, unc in states)
            if not states:
                break
        return out

    def _state_rank(self, cases, unc, d_ok):
        fired = self.all & ~unc
        right = (unc & d_ok).bit_count()
        # rows claimed by cases are right when their own case is right
        rs = RuleSet(cases, Const(0))
        pred_vals = rs.predict(self.rows)
        right += (to_bits(pred_vals == self.rows.labels) & fired).bit_count()
        return (-right, complexity(rs), rs.sexpr())

    def finish(self, cases, unc, default) -> RuleSet:
        options = [default]
        if self.target is not None:
            options.append(Var(self.target))
        if unc & ~self.ok(default):
            options += self.front
        built = [simplify(RuleSet(cases, d)) for d in dict.fromkeys(options)]
        return min(built, key=lambda rs: _sort_key(rs, self.rows, self.config.lam))


def fit_ruleset(rows: Rows, config: SearchConfig | None = None, target: int | None = None) -> RuleSet:
    """Ordered (condition, equation) cases plus a default for one cell's next value.

    An unconditional exact equation wins outright. Otherwise decision lists
    are grown greedily (with a small beam) from a few default equations; each
    case pairs an equation that fixes some of the default's misses with a
    condition that never fires where that equation is wrong. The candidate
    with the least ``(1 - accuracy) + lam * complexity`` is returned.
    """
    config = config or SearchConfig()
    target = rows.target if target is None else target
    if len(rows) < 2:
        raise ValueError("need at least two rows")
    pool = candidate_vars(rows, config, target)
    front = search_equations(rows, config, pool)
    exact = [c for c in front if c.correct == c.n]
    if exact:
        return RuleSet((), min(exact, key=lambda c: (c.complexity, _tie_key(c.expr, target))).expr)

    results = [RuleSet((), c.expr) for c in front]
    seeds = [
        c.expr for c in sorted(front, key=lambda c: (c.objective(config.lam), c.complexity, _tie_key(c.expr, target)))[:2]
    ]
    if target is not None and target not in config.exclude:
        seeds.append(Var(target))
    grower = _Grower(rows, config, target, pool, [c.expr for c in front])
    for seed in dict.fromkeys(seeds):
        results.extend(grower.grow(seed))
    best = min(results, key=lambda rs: _sort_key(rs, rows, config.lam))

    acc = best.accuracy(rows)
    if acc < config.theta and target is not None:
        hold = RuleSet((), Var(target)).accuracy(rows)
        if acc < hold:
            raise NoRuleFound(f"best rule set reaches {acc:.3f} < theta and < hold {hold:.3f}", best)
    return best
