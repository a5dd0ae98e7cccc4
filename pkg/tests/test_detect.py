import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from comet.detect import Tracker, UnknownPaletteIndex, detect, track
from comet.envs import Frame, ObjectState, PaletteEntry, make_env
from comet.trace import RandomPolicy, sample

PALETTE = {1: PaletteEntry("Block"), 2: PaletteEntry("Bar", score_bar=True)}


def _frame(rects, w=20, h=12):
    px = np.zeros((h, w), dtype=np.uint8)
    for idx, x, y, rw, rh in rects:
        px[y : y + rh, x : x + rw] = idx
    return Frame(w, h, px)


def test_boxes_and_score_value():
    objs = detect(_frame([(1, 2, 3, 4, 2), (2, 10, 0, 6, 1)]), PALETTE)
    assert objs == [ObjectState("Block", 0, 2, 3, 4, 2), ObjectState("Bar", 0, 10, 0, 6, 1, value=5)]


def test_diagonal_touch_is_two_objects():
    objs = detect(_frame([(1, 0, 0, 2, 2), (1, 2, 2, 2, 2)]), PALETTE)
    assert [(o.instance, o.x, o.y) for o in objs] == [(0, 0, 0), (1, 2, 2)]


def test_empty_frame():
    assert detect(_frame([]), PALETTE) == []


def test_unknown_palette_index():
    with pytest.raises(UnknownPaletteIndex):
        detect(_frame([(7, 0, 0, 1, 1)]), PALETTE)


def test_lane_instances():
    pal = {1: PaletteEntry("Car", lane_y0=20, lane_pitch=16)}
    objs = detect(_frame([(1, 3, 36, 8, 8), (1, 0, 20, 8, 8)], w=40, h=60), pal)
    assert sorted((o.instance, o.x) for o in objs) == [(1, 0), (2, 3)]


def test_track_is_order_independent():
    prev = [ObjectState("B", 0, 0, 0, 2, 2), ObjectState("B", 1, 10, 0, 2, 2)]
    cur = [ObjectState("B", 0, 11, 0, 2, 2), ObjectState("B", 1, 1, 0, 2, 2)]
    assert track(prev, cur) == [(0, 1), (1, 0)]
    assert track(prev[::-1], cur) == [(0, 0), (1, 1)]


def test_tracker_keeps_identity_and_fills_roster():
    tr = Tracker(roster=(("B", 0), ("B", 1), ("C", 0)))
    first = tr.update([ObjectState("B", 0, 0, 0, 2, 2), ObjectState("B", 1, 10, 0, 2, 2)])
    assert [o.key for o in first] == [("B", 0), ("B", 1), ("C", 0)]
    assert not first[2].visible
    # detector numbering flips when the objects cross; the tracker does not
    second = tr.update([ObjectState("B", 0, 8, 0, 2, 2), ObjectState("B", 1, 2, 0, 2, 2)])
    assert {o.instance: o.x for o in second if o.category == "B"} == {0: 2, 1: 8}


@pytest.mark.parametrize("env_name", ["minipong", "minifreeway"])
def test_blob_equals_oracle(env_name):
    env = make_env(env_name)
    blob = sample(env, RandomPolicy(3), 1000, 3, detector="blob")
    oracle = sample(env, RandomPolicy(3), 1000, 3, detector="oracle")
    assert blob.objects == oracle.objects


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 2), st.integers(1, 4), st.integers(1, 4)), max_size=12), st.randoms())
def test_separated_rectangles_are_recovered(shapes, rnd):
    # each rectangle owns a private 5x5 slot, so no two ever touch
    slots = rnd.sample(range(16), len(shapes))
    rects = [(idx, (k % 4) * 5, (k // 4) * 5, w, h) for (idx, w, h), k in zip(shapes, slots)]
    found = detect(_frame(rects, w=20, h=20), PALETTE)
    want = {(PALETTE[i].category, x, y, w, h) for i, x, y, w, h in rects}
    assert {(o.category, o.x, o.y, o.w, o.h) for o in found} == want
    assert all(o.value == o.w - 1 for o in found if o.category == "Bar")
