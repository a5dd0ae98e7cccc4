"""Blob detection on palette-indexed frames, plus cross-frame identity tracking."""

from __future__ import annotations

from dataclasses import replace

import numpy as np
from scipy import ndimage

from comet.envs import Frame, ObjectState, PaletteEntry


class UnknownPaletteIndex(ValueError):
    pass


def detect(frame: Frame, palette: dict[int, PaletteEntry]) -> list[ObjectState]:
    """One object per 4-connected component of each palette index.

    Score bars decode ``value = w - 1``. Categories with lane geometry get the
    lane number as instance; other repeated categories are numbered in
    ascending (y, x) order.
    """
    pixels = np.asarray(frame.pixels)
    present = np.unique(pixels)
    unknown = [int(i) for i in present if i != 0 and int(i) not in palette]
    if unknown:
        raise UnknownPaletteIndex(f"palette has no entry for pixel indices {unknown}")
    found: list[ObjectState] = []
    for index in sorted(int(i) for i in present if i != 0):
        entry = palette[index]
        labels, _ = ndimage.label(pixels == index)  # default structure is 4-connected
        boxes = []
        for sl in ndimage.find_objects(labels):
            ys, xs = sl
            boxes.append((ys.start, xs.start, xs.stop - xs.start, ys.stop - ys.start))
        boxes.sort()
        for rank, (y, x, w, h) in enumerate(boxes):
            if entry.lane_y0 is not None:
                instance = (y - entry.lane_y0) // entry.lane_pitch + 1
            else:
                instance = rank
            value = w - 1 if entry.score_bar else None
            found.append(ObjectState(entry.category, instance, x, y, w, h, value))
    return found


def _dist2(a: ObjectState, b: ObjectState) -> float:
    (ax, ay), (bx, by) = a.center, b.center
    return (ax - bx) ** 2 + (ay - by) ** 2


def track(prev: list[ObjectState], cur: list[ObjectState]) -> list[tuple[int, int]]:
    """Greedy nearest-centre matching within each category.

    Pairs are taken in order of (distance, cur y, cur x, prev y, prev x), so
    the result does not depend on list order. Hidden objects never match.
    """
    cands = []
    for i, p in enumerate(prev):
        if not p.visible:
            continue
        for j, c in enumerate(cur):
            if c.visible and c.category == p.category:
                cands.append((_dist2(p, c), c.y, c.x, p.y, p.x, i, j))
    cands.sort()
    used_p, used_c, pairs = set(), set(), []
    for *_, i, j in cands:
        if i in used_p or j in used_c:
            continue
        used_p.add(i)
        used_c.add(j)
        pairs.append((i, j))
    return sorted(pairs)


class Tracker:
    """Keeps object identities stable across frames and fills in a fixed roster.

    Lane-assigned instances are trusted as-is. Other objects inherit the
    instance of their matched predecessor; unmatched ones get a fresh id.
    Roster members that are not visible are reported as hidden objects, so
    every frame yields the same set of keys.
    """

    def __init__(self, roster=(), lane_categories=()):
        self.roster = tuple(roster)
        self.lane_categories = set(lane_categories)
        self.prev: list[ObjectState] = []
        self._next_id: dict[str, int] = {}
        for cat, inst in self.roster:
            self._next_id[cat] = max(self._next_id.get(cat, 0), inst + 1)

    @classmethod
    def for_env(cls, env) -> "Tracker":
        lanes = {e.category for e in env.palette.values() if e.lane_y0 is not None}
        return cls(env.roster, lanes)

    def update(self, detections: list[ObjectState]) -> list[ObjectState]:
        out = list(detections)
        matched = dict((j, i) for i, j in track(self.prev, out))
        taken = {o.key for j, o in enumerate(out) if o.category in self.lane_categories}
        for j, obj in enumerate(out):
            if obj.category in self.lane_categories:
                continue
            if j in matched:
                inst = self.prev[matched[j]].instance
            else:
                inst = self._fresh(obj.category, taken)
            taken.add((obj.category, inst))
            out[j] = replace(obj, instance=inst)
        keys = {o.key for o in out}
        for cat, inst in self.roster:
            if (cat, inst) not in keys:
                out.append(ObjectState.hidden(cat, inst))
        order = {k: n for n, k in enumerate(self.roster)}
        out.sort(key=lambda o: (order.get(o.key, len(order)), o.category, o.instance))
        self.prev = [o for o in out if o.visible]
        return out

    def _fresh(self, category: str, taken: set) -> int:
        # prefer the lowest roster slot of this category that is currently free
        for cat, inst in self.roster:
            if cat == category and (cat, inst) not in taken:
                return inst
        n = self._next_id.get(category, 0)
        self._next_id[category] = n + 1
        return n
