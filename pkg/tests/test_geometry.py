from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lstmatch.geometry import Box, gt_assign, iou, iou_matrix, l1_box, nms

coord = st.floats(0, 100, allow_nan=False)


@st.composite
def boxes(draw, min_size: float = 0.0):
    x1, y1 = draw(coord), draw(coord)
    w = draw(st.floats(min_size, 50, allow_nan=False))
    h = draw(st.floats(min_size, 50, allow_nan=False))
    return Box(x1, y1, x1 + w, y1 + h)


def test_iou_identical():
    assert iou([0, 0, 4, 3], [0, 0, 4, 3]) == 1.0


def test_iou_disjoint():
    assert iou([0, 0, 1, 1], [2, 2, 3, 3]) == 0.0


def test_iou_partial_overlap():
    assert iou([0, 0, 2, 2], [1, 0, 3, 2]) == pytest.approx(1 / 3, abs=1e-15)


def test_iou_degenerate_pair_is_zero():
    assert iou([1, 1, 1, 1], [1, 1, 1, 1]) == 0.0


@given(boxes(), boxes())
def test_iou_symmetric_and_bounded(a, b):
    v = iou(a, b)
    assert v == iou(b, a)
    assert 0.0 <= v <= 1.0
    assert iou_matrix(np.array([a]), np.array([b]))[0, 0] == pytest.approx(v, abs=1e-12)


@given(boxes(min_size=0.01))
def test_iou_self_is_one(a):
    assert iou(a, a) == pytest.approx(1.0, abs=1e-12)


def test_gt_assign_absent():
    assert gt_assign([[0, 0, 1, 1]], None) is None


def test_gt_assign_below_threshold():
    assert gt_assign([[0, 0, 1, 1]], [5, 5, 6, 6]) is None


def test_gt_assign_prefers_best_iou():
    assert gt_assign([[0, 0, 2, 2], [0, 0, 2, 1.8]], [0, 0, 2, 2]) == 0
    assert iou([0, 0, 2, 1.8], [0, 0, 2, 2]) == pytest.approx(0.9)


def test_gt_assign_tie_lowest_index():
    assert gt_assign([[5, 5, 6, 6], [0, 0, 2, 2], [0, 0, 2, 2]], [0, 0, 2, 2]) == 1


def test_gt_assign_empty_boxes():
    assert gt_assign([], [0, 0, 1, 1]) is None


@given(st.lists(boxes(min_size=1), min_size=0, max_size=6), st.one_of(st.none(), boxes(min_size=1)))
def test_gt_assign_matches_exhaustive_scan(cands, gt):
    got = gt_assign(cands, gt)
    if gt is None or not cands:
        assert got is None
        return
    scores = [iou(c, gt) for c in cands]
    best = max(scores)
    if best < 0.5:
        assert got is None
    else:
        assert got == scores.index(best)


def test_l1_box_examples():
    assert l1_box([0, 0, 1, 1], [0, 0, 1, 1]) == 0
    assert l1_box([0, 0, 1, 1], [0.1, 0, 1, 1]) == pytest.approx(0.1)
    assert l1_box([0, 0, 0.5, 0.5], [0.25, 0.25, 0.75, 0.75]) == pytest.approx(1.0)


def test_nms_single():
    assert nms([[0, 0, 1, 1]], [0.4]) == [0]


def test_nms_identical_pair():
    assert nms([[0, 0, 1, 1], [0, 0, 1, 1]], [0.8, 0.9], iou_threshold=0.5) == [1]


@pytest.mark.parametrize("thr", [0.0, 0.5, 1.0])
def test_nms_disjoint_kept(thr):
    assert sorted(nms([[0, 0, 1, 1], [5, 5, 6, 6]], [0.3, 0.6], thr)) == [0, 1]


def test_nms_descending_score_order():
    assert nms([[0, 0, 1, 1], [5, 5, 6, 6], [10, 10, 11, 11]], [0.2, 0.9, 0.5]) == [1, 2, 0]


@given(st.lists(st.tuples(boxes(min_size=1), st.floats(0, 1)), min_size=1, max_size=10),
       st.floats(0.05, 0.95))
def test_nms_kept_set_is_antichain(items, thr):
    bx = [b for b, _ in items]
    sc = [s for _, s in items]
    kept = nms(bx, sc, thr)
    for i in kept:
        for j in kept:
            if i != j:
                assert iou(bx[i], bx[j]) <= thr
    # every dropped box overlaps some kept box with a score at least as high
    for i in set(range(len(bx))) - set(kept):
        assert any(iou(bx[i], bx[k]) > thr and sc[k] >= sc[i] for k in kept)


def test_box_helpers():
    b = Box(0, 0, 4, 2)
    assert b.area == 8 and b.is_valid()
    assert b.normalized(4, 2) == Box(0, 0, 1, 1)
    assert not Box(2, 0, 1, 1).is_valid()
