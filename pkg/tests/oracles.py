"""Independent reference implementations the fast code is checked against."""

from __future__ import annotations

import functools
import math

import numpy as np

MUL_COEFS = (-4, -3, -2, 2, 3, 4)


@functools.lru_cache(maxsize=None)
def symbolic_trees(n_vars: int, n_acts: int, max_size: int) -> dict:
    """Every grammar tree up to ``max_size`` nodes, by meaning.

    A tree over cells and action indicators, with constants anywhere, denotes
    ``sum coef_i * leaf_i + offset`` where the offsets reachable by choosing
    its constants form the subgroup ``g * Z_256``. Returns
    ``{(coefs, g): cheapest complexity}``; ``g = 256`` means offset 0 only.
    """
    dim = n_vars + n_acts
    by_size: list[dict] = [dict()]

    def unit(i):
        return tuple(1 if j == i else 0 for j in range(dim))

    for s in range(1, max_size + 1):
        table: dict = {}

        def put(key, cx):
            if table.get(key, 1 << 30) > cx:
                table[key] = cx

        if s == 1:
            for i in range(dim):
                put((unit(i), 256), 2)
            put(((0,) * dim, 1), 1)
        else:
            for (coefs, g), cx in by_size[s - 1].items():
                put((tuple((-c) % 256 for c in coefs), g), cx + 1)
                for k in MUL_COEFS:
                    put((tuple((k * c) % 256 for c in coefs), math.gcd(k * g, 256)), cx + 1)
            for s1 in range(1, s - 1):
                for (c1, g1), x1 in by_size[s1].items():
                    for (c2, g2), x2 in by_size[s - 1 - s1].items():
                        g = math.gcd(g1, g2)
                        put((tuple((a + b) % 256 for a, b in zip(c1, c2)), g), x1 + x2 + 1)
                        put((tuple((a - b) % 256 for a, b in zip(c1, c2)), g), x1 + x2 + 1)
        by_size.append(table)
    out: dict = {}
    for table in by_size:
        for key, cx in table.items():
            if out.get(key, 1 << 30) > cx:
                out[key] = cx
    return out


def allowed(coefs, n_vars: int) -> bool:
    """Same restrictions as the fast search: <= 2 cells, <= 1 action, action with <= 1 cell."""
    cells = sum(1 for c in coefs[:n_vars] if c)
    acts = sum(1 for c in coefs[n_vars:] if c)
    return cells <= 2 and acts <= 1 and not (acts and cells > 1)


def brute_front(cells: np.ndarray, actions: np.ndarray, labels: np.ndarray, action_set, max_size: int):
    """Pareto points ``[(correct, complexity), ...]`` by exhaustive enumeration."""
    n_vars = cells.shape[1]
    feats = np.concatenate(
        [cells.astype(np.int64), np.stack([(actions == a).astype(np.int64) for a in action_set], axis=1)], axis=1
    )
    trees = symbolic_trees(n_vars, len(action_set), max_size)
    best_at: dict[int, int] = {}
    by_coefs: dict = {}
    for (coefs, g), cx in trees.items():
        if allowed(coefs, n_vars):
            by_coefs.setdefault(coefs, []).append((g, cx))
    for coefs, variants in by_coefs.items():
        lin = (feats @ np.array(coefs, dtype=np.int64)) % 256
        counts = np.bincount((labels.astype(np.int64) - lin) % 256, minlength=256)
        for g, cx in variants:
            correct = int(counts[0]) if g == 256 else int(counts[::g].max())
            if best_at.get(cx, -1) < correct:
                best_at[cx] = correct
    front, top = [], -1
    for cx in sorted(best_at):
        if best_at[cx] > top:
            front.append((best_at[cx], cx))
            top = best_at[cx]
    return front
