import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pitchtrack.core import (
    BoundingBox,
    Detection,
    DetectionBatch,
    iou,
    iou_matrix,
    solve_assignment,
)

from oracles import box_iou, brute_force_assignment


def test_box_rejects_nonpositive_size():
    with pytest.raises(ValueError):
        BoundingBox(0, 0, 0, 5)
    with pytest.raises(ValueError):
        BoundingBox(0, 0, 3, -1)


def test_box_center_roundtrip():
    b = BoundingBox.from_center(10, 20, 4, 8)
    assert (b.x, b.y) == (8, 16)
    assert b.center == (10, 20)
    assert b.area == 32


def test_iou_identical_and_disjoint():
    a = BoundingBox(0, 0, 10, 10)
    assert iou(a, a) == 1.0
    assert iou(a, BoundingBox(20, 20, 5, 5)) == 0.0
    # sharing an edge is not overlap
    assert iou(a, BoundingBox(10, 0, 10, 10)) == 0.0


def test_iou_half_shift():
    # two 10x10 boxes offset by 5 in x: inter 50, union 150
    assert iou(BoundingBox(0, 0, 10, 10), BoundingBox(5, 0, 10, 10)) == pytest.approx(1 / 3)


def test_iou_matrix_matches_scalar():
    rng = np.random.default_rng(0)
    a = np.column_stack([rng.uniform(0, 50, (6, 2)), rng.uniform(1, 20, (6, 2))])
    b = np.column_stack([rng.uniform(0, 50, (4, 2)), rng.uniform(1, 20, (4, 2))])
    m = iou_matrix(a, b)
    for i in range(6):
        for j in range(4):
            assert m[i, j] == pytest.approx(box_iou(a[i], b[j]), abs=1e-12)


def test_iou_matrix_empty():
    assert iou_matrix(np.zeros((0, 4)), np.ones((3, 4))).shape == (0, 3)


def test_detection_validation():
    box = BoundingBox(0, 0, 1, 1)
    with pytest.raises(ValueError):
        Detection(1, box, 1.5)
    with pytest.raises(ValueError):
        Detection(1, box, 0.5, np.array([1.0, 1.0]))
    Detection(1, box, 0.5, np.array([0.6, 0.8]))


def test_batch_roundtrip():
    dets = [Detection(3, BoundingBox(i, i, 2, 3), 0.5 + 0.1 * i) for i in range(3)]
    batch = DetectionBatch.from_detections(3, dets)
    assert len(batch) == 3
    assert list(batch) == dets


def test_assignment_square():
    cost = np.array([[4.0, 1.0, 3.0], [2.0, 0.0, 5.0], [3.0, 2.0, 2.0]])
    res = solve_assignment(cost)
    assert res.pairs == [(0, 1), (1, 0), (2, 2)]
    assert res.total_cost == 5.0


def test_assignment_forbidden_prefers_more_pairs():
    # cheapest single pair (0,0) would block the only way to match both rows
    cost = np.array([[0.0, 0.9], [0.1, 9.0]])
    forbid = np.array([[False, False], [False, True]])
    res = solve_assignment(cost, forbid)
    assert res.pairs == [(0, 1), (1, 0)]


def test_assignment_all_forbidden():
    res = solve_assignment(np.ones((2, 3)), np.ones((2, 3), dtype=bool))
    assert res.pairs == [] and res.total_cost == 0.0


def test_assignment_infinite_cost_is_forbidden():
    cost = np.array([[math.inf, 1.0], [2.0, math.inf]])
    res = solve_assignment(cost)
    assert res.pairs == [(0, 1), (1, 0)]
    assert res.total_cost == 3.0


def test_assignment_empty():
    assert solve_assignment(np.zeros((0, 3))).pairs == []


@settings(max_examples=150, deadline=None)
@given(
    st.integers(1, 5).flatmap(
        lambda r: st.integers(1, 5).flatmap(
            lambda c: st.tuples(
                st.lists(st.lists(st.integers(0, 6), min_size=c, max_size=c), min_size=r, max_size=r),
                st.lists(st.lists(st.booleans(), min_size=c, max_size=c), min_size=r, max_size=r),
            )
        )
    )
)
def test_assignment_matches_enumeration_with_ties_and_forbids(data):
    cost, forbid = data
    res = solve_assignment(np.array(cost, float), np.array(forbid))
    ref_pairs, ref_total = brute_force_assignment(cost, forbid)
    assert len(res.pairs) == len(ref_pairs)
    assert res.total_cost == ref_total
    assert all(not forbid[r][c] for r, c in res.pairs)
