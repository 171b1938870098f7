import numpy as np
import pytest
from hypothesis import given, strategies as st

from detcal.geometry import BoundingBox, iou, iou_matrix, normalize, xywh_to_cxcywh

from oracles import corner_iou

coord = st.floats(min_value=0.0, max_value=1000.0, allow_nan=False)
extent = st.floats(min_value=0.01, max_value=500.0, allow_nan=False)
boxes = st.builds(BoundingBox, coord, coord, extent, extent)


def test_iou_identity():
    b = BoundingBox(3.0, 4.0, 2.0, 5.0)
    assert iou(b, b) == 1.0


def test_iou_disjoint():
    assert iou(BoundingBox(1, 1, 2, 2), BoundingBox(10, 10, 2, 2)) == 0.0


def test_iou_touching_edges_is_zero():
    assert iou(BoundingBox(1, 1, 2, 2), BoundingBox(3, 1, 2, 2)) == 0.0


def test_iou_half_overlap():
    # intersection 1x2 = 2, union 4 + 4 - 2 = 6
    assert iou(BoundingBox(1, 1, 2, 2), BoundingBox(2, 1, 2, 2)) == pytest.approx(1 / 3, abs=1e-15)


@pytest.mark.parametrize("w,h", [(0, 1), (1, 0), (-1, 2)])
def test_degenerate_boxes_rejected(w, h):
    with pytest.raises(ValueError):
        BoundingBox(5, 5, w, h)


def test_relative_box_range_checked():
    BoundingBox(0.5, 0.5, 1.0, 1.0, relative=True)
    with pytest.raises(ValueError):
        BoundingBox(1.2, 0.5, 0.1, 0.1, relative=True)


@given(boxes, boxes)
def test_iou_symmetric_and_bounded(a, b):
    v = iou(a, b)
    assert v == iou(b, a)
    assert 0.0 <= v <= 1.0


@given(boxes)
def test_iou_self_is_one(a):
    assert iou(a, a) == 1.0


@given(boxes, boxes, st.floats(0.1, 10.0), st.floats(0.0, 100.0), st.floats(0.0, 100.0))
def test_iou_invariant_to_scale_and_shift(a, b, s, dx, dy):
    def tf(box):
        return BoundingBox(box.cx * s + dx, box.cy * s + dy, box.w * s, box.h * s)

    # corner differences lose about eps * |coordinate| / extent to cancellation
    boxes_ = (a, b, tf(a), tf(b))
    magnitude = max(max(abs(x.cx) + x.w, abs(x.cy) + x.h) for x in boxes_)
    extent = min(min(x.w, x.h) for x in boxes_)
    tol = 1e-12 + 32 * np.finfo(float).eps * magnitude / extent
    assert iou(tf(a), tf(b)) == pytest.approx(iou(a, b), abs=tol)


def test_iou_matrix_matches_scalar_and_corner_oracle(rng):
    from conftest import random_boxes
    a = random_boxes(rng, 40)
    b = random_boxes(rng, 30)
    mat = iou_matrix(a, b)
    for i in range(len(a)):
        for j in range(len(b)):
            assert mat[i, j] == pytest.approx(corner_iou(a[i], b[j]), abs=1e-12)
            assert mat[i, j] == iou(BoundingBox(*a[i]), BoundingBox(*b[j]))


def test_iou_matrix_empty():
    assert iou_matrix(np.zeros((0, 4)), np.ones((3, 4))).shape == (0, 3)


def test_normalize_center_box():
    r = normalize(BoundingBox(320, 240, 64, 48), 640, 480)
    assert (r.cx, r.cy, r.w, r.h) == (0.5, 0.5, 0.1, 0.1)
    assert r.relative


def test_normalize_full_frame():
    r = normalize(BoundingBox(320, 240, 640, 480), 640, 480)
    assert (r.cx, r.cy, r.w, r.h) == (0.5, 0.5, 1.0, 1.0)


def test_normalize_clamps_overshoot():
    r = normalize(BoundingBox(641, 240, 10, 10), 640, 480)
    assert r.cx == 1.0


@pytest.mark.parametrize("w,h", [(0, 480), (640, -1)])
def test_normalize_rejects_bad_image(w, h):
    with pytest.raises(ValueError):
        normalize(BoundingBox(1, 1, 1, 1), w, h)


def test_corner_conversion():
    assert xywh_to_cxcywh([10, 20, 30, 40]).tolist() == [[25, 40, 30, 40]]
    b = BoundingBox.from_xywh(10, 20, 30, 40)
    assert (b.cx, b.cy, b.w, b.h) == (25, 40, 30, 40)
    assert b.to_xywh() == [10, 20, 30, 40]
