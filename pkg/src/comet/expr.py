"""Integer expression and predicate ASTs over state cells and actions.

Expressions evaluate in signed integers and are reduced mod 256. Predicates are
total boolean functions. Both evaluate vectorised over a batch of rows, or on
a single row, and serialise to s-expression text::

    (add (var s3) (var s5))
    (eq (var s18) 2)
    (and (lt (var s3) (var s1)) (act 2))
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Union

import numpy as np


class UnboundVariable(KeyError):
    pass


class ParseError(ValueError):
    pass


@dataclass(frozen=True)
class Row:
    """One state vector plus the action taken from it."""

    cells: np.ndarray
    action: int


def _cells_and_actions(row):
    if isinstance(row, Row):
        return np.asarray(row.cells, dtype=np.int64), np.int64(row.action)
    cells = getattr(row, "cells")
    return cells, getattr(row, "actions")


def _cell(cells, k):
    if k < 0 or k >= cells.shape[-1]:
        raise UnboundVariable(f"s{k}")
    return cells[..., k].astype(np.int64)


# ---------------------------------------------------------------------------
# Expressions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Const:
    c: int

    def sexpr(self):
        return str(self.c)


@dataclass(frozen=True)
class Var:
    k: int

    def sexpr(self):
        return f"(var s{self.k})"


@dataclass(frozen=True)
class Act:
    a: int

    def sexpr(self):
        return f"(act {self.a})"


@dataclass(frozen=True)
class Neg:
    child: "Expression"

    def sexpr(self):
        return f"(neg {self.child.sexpr()})"


@dataclass(frozen=True)
class Add:
    l: "Expression"
    r: "Expression"

    def sexpr(self):
        return f"(add {self.l.sexpr()} {self.r.sexpr()})"


@dataclass(frozen=True)
class Sub:
    l: "Expression"
    r: "Expression"

    def sexpr(self):
        return f"(sub {self.l.sexpr()} {self.r.sexpr()})"


@dataclass(frozen=True)
class MulConst:
    c: int
    child: "Expression"

    def sexpr(self):
        return f"(mul {self.c} {self.child.sexpr()})"


Expression = Union[Const, Var, Act, Neg, Add, Sub, MulConst]
EXPR_TYPES = (Const, Var, Act, Neg, Add, Sub, MulConst)


def _eval_raw(e, cells, action):
    if isinstance(e, Const):
        return np.int64(e.c)
    if isinstance(e, Var):
        return _cell(cells, e.k)
    if isinstance(e, Act):
        return (action == e.a).astype(np.int64)
    if isinstance(e, Neg):
        return -_eval_raw(e.child, cells, action)
    if isinstance(e, Add):
        return _eval_raw(e.l, cells, action) + _eval_raw(e.r, cells, action)
    if isinstance(e, Sub):
        return _eval_raw(e.l, cells, action) - _eval_raw(e.r, cells, action)
    if isinstance(e, MulConst):
        return e.c * _eval_raw(e.child, cells, action)
    raise TypeError(f"not an expression: {e!r}")


def eval_expr(e: Expression, row):
    """Value of ``e`` on ``row`` (a Row, or a batch with .cells/.actions), in [0, 255]."""
    cells, action = _cells_and_actions(row)
    out = np.mod(_eval_raw(e, cells, action), 256)
    if cells.ndim == 1:
        return int(out)
    return np.broadcast_to(out, cells.shape[:1]).astype(np.int64)


def expr_size(e) -> int:
    if isinstance(e, (Const, Var, Act)):
        return 1
    if isinstance(e, (Neg, MulConst)):
        return 1 + expr_size(e.child)
    return 1 + expr_size(e.l) + expr_size(e.r)


# ---------------------------------------------------------------------------
# Predicates
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Always:
    def sexpr(self):
        return "(always)"


@dataclass(frozen=True)
class Never:
    def sexpr(self):
        return "(never)"


@dataclass(frozen=True)
class ActEq:
    a: int

    def sexpr(self):
        return f"(act {self.a})"


@dataclass(frozen=True)
class VarEqConst:
    k: int
    c: int

    def sexpr(self):
        return f"(eq (var s{self.k}) {self.c})"


@dataclass(frozen=True)
class VarLtConst:
    k: int
    c: int

    def sexpr(self):
        return f"(lt (var s{self.k}) {self.c})"


@dataclass(frozen=True)
class ConstLtVar:
    c: int
    k: int

    def sexpr(self):
        return f"(lt {self.c} (var s{self.k}))"


@dataclass(frozen=True)
class VarLtVar:
    k: int
    j: int

    def sexpr(self):
        return f"(lt (var s{self.k}) (var s{self.j}))"


@dataclass(frozen=True)
class AbsDiffLt:
    k: int
    j: int
    c: int

    def sexpr(self):
        return f"(near (var s{self.k}) (var s{self.j}) {self.c})"


@dataclass(frozen=True)
class And:
    a: "Predicate"
    b: "Predicate"

    def sexpr(self):
        return f"(and {self.a.sexpr()} {self.b.sexpr()})"


Predicate = Union[Always, Never, ActEq, VarEqConst, VarLtConst, ConstLtVar, VarLtVar, AbsDiffLt, And]
PRED_TYPES = (Always, Never, ActEq, VarEqConst, VarLtConst, ConstLtVar, VarLtVar, AbsDiffLt, And)


def _eval_pred_raw(p, cells, action):
    if isinstance(p, Always):
        return np.bool_(True)
    if isinstance(p, Never):
        return np.bool_(False)
    if isinstance(p, ActEq):
        return action == p.a
    if isinstance(p, VarEqConst):
        return _cell(cells, p.k) == p.c
    if isinstance(p, VarLtConst):
        return _cell(cells, p.k) < p.c
    if isinstance(p, ConstLtVar):
        return p.c < _cell(cells, p.k)
    if isinstance(p, VarLtVar):
        return _cell(cells, p.k) < _cell(cells, p.j)
    if isinstance(p, AbsDiffLt):
        return np.abs(_cell(cells, p.k) - _cell(cells, p.j)) < p.c
    if isinstance(p, And):
        return _eval_pred_raw(p.a, cells, action) & _eval_pred_raw(p.b, cells, action)
    raise TypeError(f"not a predicate: {p!r}")


def eval_pred(p: Predicate, row):
    cells, action = _cells_and_actions(row)
    out = _eval_pred_raw(p, cells, action)
    if cells.ndim == 1:
        return bool(out)
    return np.broadcast_to(out, cells.shape[:1]).astype(bool)


def literals(p) -> list:
    return literals(p.a) + literals(p.b) if isinstance(p, And) else [p]


# ---------------------------------------------------------------------------
# Complexity, variables, ordering
# ---------------------------------------------------------------------------

_LEAF_COST = {Const: 1, Var: 2, Act: 2}
_LITERAL_COST = {Always: 1, Never: 1, ActEq: 3, VarEqConst: 4, VarLtConst: 4, ConstLtVar: 4, VarLtVar: 5, AbsDiffLt: 6}


def complexity(node) -> int:
    """Const 1, Var/Act 2, every operator or literal 1; rule-set cases add 1 each."""
    from comet.symreg import RuleSet

    if isinstance(node, RuleSet):
        return sum(complexity(p) + complexity(e) + 1 for p, e in node.cases) + complexity(node.default)
    t = type(node)
    if t in _LEAF_COST:
        return _LEAF_COST[t]
    if t in (Neg, MulConst):
        return 1 + complexity(node.child)
    if t in (Add, Sub):
        return 1 + complexity(node.l) + complexity(node.r)
    if t is And:
        return 1 + complexity(node.a) + complexity(node.b)
    if t in _LITERAL_COST:
        return _LITERAL_COST[t]
    raise TypeError(f"cannot measure {node!r}")


def variables(node) -> set[int]:
    from comet.symreg import RuleSet

    if isinstance(node, RuleSet):
        out = variables(node.default)
        for p, e in node.cases:
            out |= variables(p) | variables(e)
        return out
    if isinstance(node, Var):
        return {node.k}
    if isinstance(node, (VarEqConst, VarLtConst, ConstLtVar)):
        return {node.k}
    if isinstance(node, (VarLtVar, AbsDiffLt)):
        return {node.k, node.j}
    if isinstance(node, (Neg, MulConst)):
        return variables(node.child)
    if isinstance(node, (Add, Sub)):
        return variables(node.l) | variables(node.r)
    if isinstance(node, And):
        return variables(node.a) | variables(node.b)
    return set()


def actions_used(node) -> set[int]:
    from comet.symreg import RuleSet

    if isinstance(node, RuleSet):
        out = actions_used(node.default)
        for p, e in node.cases:
            out |= actions_used(p) | actions_used(e)
        return out
    if isinstance(node, (Act, ActEq)):
        return {node.a}
    if isinstance(node, (Neg, MulConst)):
        return actions_used(node.child)
    if isinstance(node, (Add, Sub)):
        return actions_used(node.l) | actions_used(node.r)
    if isinstance(node, And):
        return actions_used(node.a) | actions_used(node.b)
    return set()


_ORDER = {t: i for i, t in enumerate(EXPR_TYPES + PRED_TYPES)}


def node_key(node) -> tuple:
    """Total lexicographic order over nodes: type rank, then fields in order."""
    t = type(node)
    parts = [_ORDER[t]]
    for name in node.__dataclass_fields__:
        v = getattr(node, name)
        parts.append(node_key(v) if hasattr(v, "__dataclass_fields__") else (v,))
    return tuple(parts)


# ---------------------------------------------------------------------------
# s-expression parsing
# ---------------------------------------------------------------------------

_TOKEN = re.compile(r"\(|\)|[^\s()]+")


def _tokens(text: str) -> list[str]:
    return _TOKEN.findall(text)


def _read(tokens, i):
    if i >= len(tokens):
        raise ParseError("unexpected end of input")
    tok = tokens[i]
    if tok == "(":
        out = []
        i += 1
        while i < len(tokens) and tokens[i] != ")":
            item, i = _read(tokens, i)
            out.append(item)
        if i >= len(tokens):
            raise ParseError("missing ')'")
        return out, i + 1
    if tok == ")":
        raise ParseError("unexpected ')'")
    return tok, i + 1


def read_sexpr(text: str):
    tokens = _tokens(text)
    tree, i = _read(tokens, 0)
    if i != len(tokens):
        raise ParseError(f"trailing input in {text!r}")
    return tree


def _int(tok) -> int:
    try:
        return int(tok)
    except (TypeError, ValueError):
        raise ParseError(f"expected integer, got {tok!r}") from None


def _cellref(tree) -> int:
    if isinstance(tree, list) and len(tree) == 2 and tree[0] == "var" and str(tree[1]).startswith("s"):
        return _int(tree[1][1:])
    raise ParseError(f"expected (var sK), got {tree!r}")


def _is_var(tree) -> bool:
    return isinstance(tree, list) and tree[:1] == ["var"]


def expr_from_tree(tree) -> Expression:
    if isinstance(tree, str):
        return Const(_int(tree))
    if not tree:
        raise ParseError("empty expression")
    head, args = tree[0], tree[1:]
    if head == "var":
        return Var(_cellref(tree))
    if head == "act" and len(args) == 1:
        return Act(_int(args[0]))
    if head == "neg" and len(args) == 1:
        return Neg(expr_from_tree(args[0]))
    if head in ("add", "sub") and len(args) == 2:
        cls = Add if head == "add" else Sub
        return cls(expr_from_tree(args[0]), expr_from_tree(args[1]))
    if head == "mul" and len(args) == 2:
        return MulConst(_int(args[0]), expr_from_tree(args[1]))
    raise ParseError(f"bad expression {tree!r}")


def pred_from_tree(tree) -> Predicate:
    if not isinstance(tree, list) or not tree:
        raise ParseError(f"bad predicate {tree!r}")
    head, args = tree[0], tree[1:]
    if head == "always" and not args:
        return Always()
    if head == "never" and not args:
        return Never()
    if head == "act" and len(args) == 1:
        return ActEq(_int(args[0]))
    if head == "eq" and len(args) == 2:
        return VarEqConst(_cellref(args[0]), _int(args[1]))
    if head == "lt" and len(args) == 2:
        a, b = args
        if _is_var(a) and _is_var(b):
            return VarLtVar(_cellref(a), _cellref(b))
        if _is_var(a):
            return VarLtConst(_cellref(a), _int(b))
        return ConstLtVar(_int(a), _cellref(b))
    if head == "near" and len(args) == 3:
        return AbsDiffLt(_cellref(args[0]), _cellref(args[1]), _int(args[2]))
    if head == "and" and len(args) == 2:
        return And(pred_from_tree(args[0]), pred_from_tree(args[1]))
    raise ParseError(f"bad predicate {tree!r}")


def parse_expr(text: str) -> Expression:
    return expr_from_tree(read_sexpr(text))


def parse_pred(text: str) -> Predicate:
    return pred_from_tree(read_sexpr(text))


def infix(e) -> str:
    """Human-readable form, e.g. ``s3 + s5`` or ``s3 - 14``."""
    if isinstance(e, Const):
        return str(e.c)
    if isinstance(e, Var):
        return f"s{e.k}"
    if isinstance(e, Act):
        return f"act[{e.a}]"
    if isinstance(e, Neg):
        return f"-{_paren(e.child)}"
    if isinstance(e, Add):
        return f"{infix(e.l)} + {_paren(e.r)}"
    if isinstance(e, Sub):
        return f"{infix(e.l)} - {_paren(e.r)}"
    if isinstance(e, MulConst):
        return f"{e.c}*{_paren(e.child)}"
    if isinstance(e, Always):
        return "always"
    if isinstance(e, Never):
        return "never"
    if isinstance(e, ActEq):
        return f"act == {e.a}"
    if isinstance(e, VarEqConst):
        return f"s{e.k} == {e.c}"
    if isinstance(e, VarLtConst):
        return f"s{e.k} < {e.c}"
    if isinstance(e, ConstLtVar):
        return f"s{e.k} > {e.c}"
    if isinstance(e, VarLtVar):
        return f"s{e.k} < s{e.j}"
    if isinstance(e, AbsDiffLt):
        return f"|s{e.k} - s{e.j}| < {e.c}"
    if isinstance(e, And):
        return f"{infix(e.a)} and {infix(e.b)}"
    raise TypeError(e)


def _paren(e) -> str:
    s = infix(e)
    return f"({s})" if isinstance(e, (Add, Sub)) else s
