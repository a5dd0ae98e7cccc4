"""Hand-written update rules of the bundled environments, in the regression grammar."""

from __future__ import annotations

from comet.envs import MiniFreeway, MiniPong
from comet.expr import (
    AbsDiffLt,
    ActEq,
    Add,
    And,
    Const,
    ConstLtVar,
    Sub,
    Var,
    VarEqConst,
    VarLtConst,
    VarLtVar,
)
from comet.pipeline import CausalWorldModel, UpdateRule
from comet.symreg import RuleSet

V = Var


def _hold(k, *cases):
    return RuleSet(tuple(cases), V(k))


def minipong_rules() -> dict[int, RuleSet]:
    P = MiniPong
    player_miss = And(VarEqConst(2, P.PLAYER_MISS_X), VarEqConst(4, 2))
    enemy_miss = And(VarEqConst(2, P.ENEMY_MISS_X), VarEqConst(4, 254))
    rules = {
        0: _hold(
            0,
            (And(ActEq(1), ConstLtVar(16, 0)), Sub(V(0), Const(4))),
            (And(ActEq(2), VarLtConst(0, 176)), Add(V(0), Const(4))),
        ),
        1: RuleSet(
            ((AbsDiffLt(1, 3, P.ENEMY_SLACK), V(1)), (VarLtVar(3, 1), Sub(V(1), Const(2)))),
            Add(V(1), Const(2)),
        ),
        2: RuleSet(((player_miss, Const(P.SERVE_X)), (enemy_miss, Const(P.SERVE_X))), Add(V(2), V(4))),
        3: RuleSet((), Add(V(3), V(5))),
        4: _hold(
            4,
            (And(VarEqConst(2, P.PLAYER_HIT_X), AbsDiffLt(0, 3, P.PLAYER_REACH)), Const(254)),
            (And(VarEqConst(2, P.ENEMY_HIT_X), VarLtConst(3, P.ENEMY_BLIND_Y)), Const(2)),
        ),
        5: _hold(5, (VarLtConst(3, P.TOP_BAND), Const(2)), (ConstLtVar(P.BOTTOM_BAND, 3), Const(254))),
        6: _hold(6, (VarEqConst(6, P.MAX_SCORE), Const(0)), (enemy_miss, Add(V(6), Const(1)))),
        7: _hold(7, (VarEqConst(7, P.MAX_SCORE), Const(0)), (player_miss, Add(V(7), Const(1)))),
        8: RuleSet((), Sub(Const(1), V(8))),
        9: RuleSet((), Const(255)),
    }
    for k in range(10, P.ram_size):
        rules[k] = RuleSet((), Const(0))
    return rules


def minifreeway_rules() -> dict[int, RuleSet]:
    F = MiniFreeway
    rules = {
        0: _hold(
            0,
            (VarEqConst(0, F.TOP), Const(F.BOTTOM)),
            (ActEq(1), Sub(V(0), Const(4))),
            (And(ActEq(2), VarLtConst(0, F.BOTTOM)), Add(V(0), Const(4))),
        )
    }
    for i in range(1, 11):
        counter, period, speed = 10 + i, F.PERIODS[i - 1], F.SPEEDS[i - 1]
        move = Add(V(i), Const(speed)) if i <= 5 else Sub(V(i), Const(speed))
        fires = VarEqConst(counter, period - 1)
        rules[i] = _hold(i, (fires, move))
        rules[counter] = RuleSet(((fires, Const(0)),), Add(V(counter), Const(1)))
    rules[21] = RuleSet((), Const(1))
    rules[22] = _hold(22, (VarEqConst(22, F.MAX_SCORE), Const(0)), (VarEqConst(0, F.TOP), Add(V(22), Const(1))))
    for k in range(23, F.ram_size):
        rules[k] = RuleSet((), Const(0))
    return rules


GROUND_TRUTH = {"minipong": minipong_rules, "minifreeway": minifreeway_rules}


def ground_truth_model(env_name: str, cells=None) -> CausalWorldModel:
    """Ground-truth model restricted to ``cells`` (default: every cell)."""
    rules = GROUND_TRUTH[env_name]()
    keep = sorted(rules) if cells is None else sorted(cells)
    model = CausalWorldModel(env_name, 32)
    model.rules = {k: UpdateRule(k, rules[k], "verified", 1.0) for k in keep}
    return model
