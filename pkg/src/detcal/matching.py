"""Greedy one-to-one matching of detections against ground truth.

Detections of an image are visited in descending confidence (ties by input
position). Each claims the unclaimed ground-truth box with the highest IoU if
that IoU reaches the threshold, which makes every later duplicate of the same
object a false positive.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import iou_matrix, normalize_array
from .postprocess import group_by_image
from .samples import SampleSet


@dataclass(frozen=True)
class MatchConfig:
    iou_threshold: float = 0.5
    exclude_crowd: bool = True

    def __post_init__(self):
        if not 0.0 < self.iou_threshold < 1.0:
            raise ValueError(f"matching IoU threshold must lie in (0, 1), got {self.iou_threshold}")


def match_flags(det_boxes, det_scores, gt_boxes, iou_threshold):
    """Greedy matching on arrays of one image; returns a 0/1 flag per detection."""
    det_boxes = np.asarray(det_boxes, dtype=float).reshape(-1, 4)
    flags = np.zeros(len(det_boxes), dtype=np.int8)
    gt_boxes = np.asarray(gt_boxes, dtype=float).reshape(-1, 4)
    if len(det_boxes) == 0 or len(gt_boxes) == 0:
        return flags
    overlaps = iou_matrix(det_boxes, gt_boxes)
    claimed = np.zeros(len(gt_boxes), dtype=bool)
    order = np.argsort(-np.asarray(det_scores, dtype=float), kind="stable")
    for i in order:
        candidates = np.where(claimed, -1.0, overlaps[i])
        j = int(np.argmax(candidates))
        if candidates[j] >= iou_threshold:
            flags[i] = 1
            claimed[j] = True
            if claimed.all():
                break
    return flags


def match(detections, ground_truths, images, config: MatchConfig = MatchConfig()):
    """Turn detections into matched samples with image-relative features.

    Parameters
    ----------
    detections : sequence of Detection
        Already filtered to a single category and post-processed.
    ground_truths : sequence of GroundTruthObject
    images : sequence of ImageInfo or mapping image_id -> ImageInfo
    config : MatchConfig

    Returns
    -------
    SampleSet
        One sample per input detection, in input order.
    """
    if isinstance(images, dict):
        image_index = images
    else:
        image_index = {im.image_id: im for im in images}
    detections = list(detections)
    n = len(detections)
    if n == 0:
        return SampleSet.empty()

    gt_by_image = group_by_image(
        g for g in ground_truths if not (config.exclude_crowd and g.crowd)
    )
    by_image = {}
    for i, d in enumerate(detections):
        by_image.setdefault(d.image_id, []).append(i)
    boxes = np.empty((n, 4))
    widths = np.empty(n)
    heights = np.empty(n)
    flags = np.zeros(n, dtype=np.int8)
    for image_id, members in by_image.items():
        info = image_index.get(image_id)
        if info is None:
            raise KeyError(f"no image size known for image_id {image_id!r}")
        idx = np.asarray(members, dtype=int)
        dets = [detections[i] for i in members]
        det_boxes = np.array([d.box.as_array() for d in dets])
        boxes[idx] = det_boxes
        widths[idx] = info.width
        heights[idx] = info.height
        gts = gt_by_image.get(image_id, [])
        if gts:
            scores = [d.confidence for d in dets]
            gt_boxes = np.array([g.box.as_array() for g in gts])
            flags[idx] = match_flags(det_boxes, scores, gt_boxes, config.iou_threshold)

    rel = normalize_array(boxes, widths, heights)
    return SampleSet(
        confidence=[d.confidence for d in detections],
        cx=rel[:, 0], cy=rel[:, 1], w=rel[:, 2], h=rel[:, 3],
        matched=flags,
        image_id=[d.image_id for d in detections],
    )
