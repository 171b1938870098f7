"""Box post-processing stages and their composition into pipelines.

A pipeline is an ordered list of stages applied per image. With no stages it
passes the raw detector output through unchanged (white-box); inserting an
:class:`Nms` stage yields a black-box configuration.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import iou_matrix


@dataclass(frozen=True)
class TopK:
    k: int

    def __post_init__(self):
        if isinstance(self.k, bool) or int(self.k) != self.k or self.k < 1:
            raise ValueError(f"top-k needs a positive integer k, got {self.k!r}")

    def __call__(self, detections):
        return top_k(detections, self.k)


@dataclass(frozen=True)
class Nms:
    iou_threshold: float

    def __post_init__(self):
        if not 0.0 < self.iou_threshold <= 1.0:
            raise ValueError(f"NMS threshold must lie in (0, 1], got {self.iou_threshold}")

    def __call__(self, detections):
        return nms(detections, self.iou_threshold)


@dataclass(frozen=True)
class ConfidenceThreshold:
    threshold: float

    def __post_init__(self):
        if not 0.0 <= self.threshold < 1.0:
            raise ValueError(f"confidence threshold must lie in [0, 1), got {self.threshold}")

    def __call__(self, detections):
        return confidence_threshold(detections, self.threshold)


_STAGE_KEYS = {"top_k": (TopK, "k"), "nms": (Nms, "iou_threshold"), "threshold": (ConfidenceThreshold, "threshold")}


@dataclass(frozen=True)
class PipelineConfig:
    """Ordered post-processing stages; each stage type may appear once."""

    stages: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))
        kinds = [type(s) for s in self.stages]
        for s in self.stages:
            if not isinstance(s, (TopK, Nms, ConfidenceThreshold)):
                raise TypeError(f"unknown pipeline stage {s!r}")
        if len(set(kinds)) != len(kinds):
            raise ValueError("each stage type may appear at most once in a pipeline")

    @classmethod
    def standard(cls, nms_threshold=None, k=1000, threshold=0.3):
        """Top-k, optional NMS, then confidence thresholding (the default order)."""
        stages = []
        if k is not None:
            stages.append(TopK(k))
        if nms_threshold is not None:
            stages.append(Nms(nms_threshold))
        if threshold is not None:
            stages.append(ConfidenceThreshold(threshold))
        return cls(tuple(stages))

    @classmethod
    def from_list(cls, items):
        """Build from ``[{"top_k": 1000}, {"nms": 0.5}, {"threshold": 0.3}]``."""
        stages = []
        for item in items:
            if not isinstance(item, dict) or len(item) != 1:
                raise ValueError(f"pipeline stage must be a single-key mapping, got {item!r}")
            (key, value), = item.items()
            if key not in _STAGE_KEYS:
                raise ValueError(f"unknown pipeline stage {key!r}")
            stages.append(_STAGE_KEYS[key][0](value))
        return cls(tuple(stages))

    def to_list(self):
        out = []
        for s in self.stages:
            for key, (kind, attr) in _STAGE_KEYS.items():
                if isinstance(s, kind):
                    out.append({key: getattr(s, attr)})
        return out

    @property
    def nms_threshold(self):
        for s in self.stages:
            if isinstance(s, Nms):
                return s.iou_threshold
        return None


def _confidences(detections):
    return np.fromiter((d.confidence for d in detections), dtype=float, count=len(detections))


def _descending_order(scores):
    # stable sort on the negated scores keeps equal scores in input order
    return np.argsort(-np.asarray(scores, dtype=float), kind="stable")


def nms_indices(boxes, scores, iou_threshold, categories=None):
    """Greedy non-maximum suppression on arrays.

    Boxes whose IoU with an already kept box of the same category is strictly
    greater than ``iou_threshold`` are removed. Returns kept indices in the
    order they were kept.
    """
    boxes = np.asarray(boxes, dtype=float).reshape(-1, 4)
    n = len(boxes)
    if n == 0:
        return np.empty(0, dtype=int)
    order = _descending_order(scores)
    overlaps = iou_matrix(boxes, boxes) > iou_threshold
    if categories is not None:
        cats = np.asarray(categories, dtype=object)
        overlaps &= cats[:, None] == cats[None, :]
    suppressed = np.zeros(n, dtype=bool)
    keep = []
    for i in order:
        if suppressed[i]:
            continue
        keep.append(i)
        suppressed |= overlaps[i]
    return np.asarray(keep, dtype=int)


def nms(detections, iou_threshold):
    """Class-wise greedy NMS over the detections of a single image."""
    detections = list(detections)
    if len(detections) <= 1:
        return detections
    boxes = np.array([d.box.as_array() for d in detections])
    keep = nms_indices(boxes, _confidences(detections), iou_threshold, [d.category for d in detections])
    return [detections[i] for i in keep]


def top_k(detections, k):
    """The ``k`` most confident detections, sorted by confidence."""
    detections = list(detections)
    order = _descending_order(_confidences(detections))[:k]
    return [detections[i] for i in order]


def confidence_threshold(detections, threshold):
    return [d for d in detections if d.confidence >= threshold]


def group_by_image(records):
    """Group records by ``image_id``, images in order of first appearance."""
    groups = {}
    for r in records:
        groups.setdefault(r.image_id, []).append(r)
    return groups


def run_pipeline(detections, config: PipelineConfig):
    """Apply the configured stages to each image in turn."""
    if not config.stages:
        return list(detections)
    out = []
    for dets in group_by_image(detections).values():
        for stage in config.stages:
            dets = stage(dets)
        out.extend(dets)
    return out
