import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from detcal.dataset_io import ImageInfo
from detcal.geometry import iou, iou_matrix
from detcal.matching import MatchConfig, match, match_flags

from conftest import det, gt, random_boxes
from oracles import optimal_matches


def test_duplicate_detections_single_gt(image):
    g = gt(50, 50, 20, 20)
    # shift 2.22 on width 20 gives IoU ~0.8
    a, b = det(52.2222, 50, 20, 20, 0.6), det(47.7778, 50, 20, 20, 0.9)
    assert iou(a.box, g.box) == pytest.approx(0.8, abs=1e-4)
    s = match([a, b], [g], [image], MatchConfig(0.5))
    assert s.matched.tolist() == [0, 1]


def test_threshold_rule(image):
    g = gt(50, 50, 20, 20)
    # IoU (20-d)/(20+d) = 0.49 -> d = 20*0.51/1.49
    d = det(50 + 20 * 0.51 / 1.49, 50, 20, 20, 0.9)
    assert iou(d.box, g.box) == pytest.approx(0.49)
    assert match([d], [g], [image], MatchConfig(0.5)).matched.tolist() == [0]
    assert match([d], [g], [image], MatchConfig(0.4899)).matched.tolist() == [1]


def test_no_ground_truth(image):
    dets = [det(10, 10, 5, 5, 0.5), det(30, 30, 5, 5, 0.7)]
    assert match(dets, [], [image]).matched.tolist() == [0, 0]


def test_features_normalized():
    d = det(50, 25, 10, 20, 0.4)
    s = match([d], [], [ImageInfo(1, 100, 50)])
    row = s[0]
    assert (row.cx, row.cy, row.w, row.h) == (0.5, 0.5, 0.1, 0.4)
    assert row.confidence == 0.4 and row.image_id == 1


def test_missing_image_info():
    with pytest.raises(KeyError):
        match([det(10, 10, 5, 5, 0.5, image_id=7)], [], [ImageInfo(1, 100, 100)])


def test_ground_truth_of_other_image_ignored():
    images = [ImageInfo(1, 100, 100), ImageInfo(2, 100, 100)]
    s = match([det(50, 50, 20, 20, 0.9, image_id=2)], [gt(50, 50, 20, 20, image_id=1)], images)
    assert s.matched.tolist() == [0]


def test_crowd_handling(image):
    crowd = gt(50, 50, 20, 20, crowd=True)
    d = det(50, 50, 20, 20, 0.9)
    assert match([d], [crowd], [image], MatchConfig(0.5, exclude_crowd=True)).matched.tolist() == [0]
    assert match([d], [crowd], [image], MatchConfig(0.5, exclude_crowd=False)).matched.tolist() == [1]
    assert len(match([d], [crowd], [image])) == 1


def test_claims_best_available_gt():
    dets = np.array([[50, 50, 20, 20], [60, 50, 20, 20]], dtype=float)
    gts = np.array([[52, 50, 20, 20], [62, 50, 20, 20]], dtype=float)
    assert match_flags(dets, [0.9, 0.8], gts, 0.5).tolist() == [1, 1]


def test_empty_inputs(image):
    assert len(match([], [gt(1, 1, 1, 1)], [image])) == 0
    assert match_flags(np.empty((0, 4)), [], np.ones((1, 4)), 0.5).tolist() == []


@pytest.mark.parametrize("tau", [0.0, 1.0, -0.2])
def test_config_validated(tau):
    with pytest.raises(ValueError):
        MatchConfig(tau)


def _instance(seed, n_det, n_gt):
    r = np.random.default_rng(seed)
    gts = random_boxes(r, n_gt, extent=80)
    dets = []
    for _ in range(n_det):
        if n_gt and r.random() < 0.7:
            base = gts[r.integers(n_gt)]
            dets.append(base + np.r_[r.normal(0, 2, 2), 0, 0])
        else:
            dets.append(random_boxes(r, 1, extent=80)[0])
    return np.array(dets).reshape(-1, 4), r.random(n_det), gts


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(0, 12), st.integers(0, 6))
def test_match_count_bounded_and_monotone(seed, n_det, n_gt):
    boxes, scores, gts = _instance(seed, n_det, n_gt)
    counts = [int(match_flags(boxes, scores, gts, t).sum()) for t in (0.9, 0.75, 0.5, 0.3, 0.1)]
    assert all(c <= n_gt for c in counts)
    assert counts == sorted(counts)
    assert len(match_flags(boxes, scores, gts, 0.5)) == n_det


def test_single_gt_agrees_with_optimum(rng):
    for _ in range(200):
        n_det = int(rng.integers(1, 4))
        boxes, scores, gts = _instance(int(rng.integers(1 << 30)), n_det, 1)
        t = float(rng.uniform(0.2, 0.8))
        assert match_flags(boxes, scores, gts, t).sum() == optimal_matches(iou_matrix(boxes, gts), t)


def test_disjoint_clusters_agree_with_optimum(rng):
    # GT boxes far apart: every detection overlaps at most one of them
    gts = np.array([[15, 15, 10, 10], [60, 15, 10, 10], [15, 60, 10, 10]], dtype=float)
    for _ in range(200):
        n_det = int(rng.integers(1, 4))
        owners = rng.integers(0, 3, n_det)
        boxes = gts[owners] + np.c_[rng.normal(0, 2, (n_det, 2)), np.zeros((n_det, 2))]
        scores = rng.random(n_det)
        t = float(rng.uniform(0.2, 0.8))
        assert match_flags(boxes, scores, gts, t).sum() == optimal_matches(iou_matrix(boxes, gts), t)


def test_output_in_input_order_across_images():
    images = [ImageInfo(1, 100, 100), ImageInfo(2, 100, 100)]
    dets = [det(50, 50, 20, 20, 0.5, image_id=2), det(10, 10, 5, 5, 0.5, image_id=1),
            det(50, 50, 20, 20, 0.9, image_id=1)]
    s = match(dets, [gt(50, 50, 20, 20, image_id=1), gt(50, 50, 20, 20, image_id=2)], images)
    assert s.image_id.tolist() == [2, 1, 1]
    assert s.matched.tolist() == [1, 0, 1]
