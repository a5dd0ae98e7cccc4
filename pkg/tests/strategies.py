"""Hypothesis strategies for grammar nodes and row batches."""

import numpy as np
from hypothesis import strategies as st

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
)
from comet.symreg import RuleSet

N_CELLS = 6
byte = st.integers(0, 255)
cell = st.integers(0, N_CELLS - 1)
action = st.integers(0, 2)

leaves = st.one_of(byte.map(Const), cell.map(Var), action.map(Act))
exprs = st.recursive(
    leaves,
    lambda kids: st.one_of(
        kids.map(Neg),
        st.builds(Add, kids, kids),
        st.builds(Sub, kids, kids),
        st.builds(MulConst, st.sampled_from([-4, -3, -2, 2, 3, 4]), kids),
    ),
    max_leaves=6,
)
literals = st.one_of(
    st.just(Always()),
    st.just(Never()),
    action.map(ActEq),
    st.builds(VarEqConst, cell, byte),
    st.builds(VarLtConst, cell, byte),
    st.builds(ConstLtVar, byte, cell),
    st.builds(VarLtVar, cell, cell),
    st.builds(AbsDiffLt, cell, cell, st.integers(1, 64)),
)
preds = st.one_of(literals, st.builds(And, literals, literals))
rulesets = st.builds(
    RuleSet, st.lists(st.tuples(preds, exprs), max_size=3).map(tuple), exprs
)


@st.composite
def batches(draw, min_rows=1, max_rows=16):
    n = draw(st.integers(min_rows, max_rows))
    hi = draw(st.sampled_from([4, 16, 256]))
    cells = np.array(draw(st.lists(st.lists(st.integers(0, hi - 1), min_size=N_CELLS, max_size=N_CELLS), min_size=n, max_size=n)))
    actions = np.array(draw(st.lists(action, min_size=n, max_size=n)))
    return cells, actions
