"""Bounding-box representation, normalization and intersection over union.

Boxes are stored in center/size encoding ``(cx, cy, w, h)``. Corner encodings
(``[x_min, y_min, w, h]`` as used by COCO files) are converted once at the
input boundary with :func:`xywh_to_cxcywh`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in center/size encoding.

    Parameters
    ----------
    cx, cy : float
        Box center.
    w, h : float
        Box width and height, both strictly positive.
    relative : bool, default=False
        True when the box is expressed as fractions of the image size.
    """

    cx: float
    cy: float
    w: float
    h: float
    relative: bool = False

    def __post_init__(self):
        values = (self.cx, self.cy, self.w, self.h)
        if not all(math.isfinite(v) for v in values):
            raise ValueError(f"box has non-finite coordinates: {values}")
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"box must have positive extent, got w={self.w}, h={self.h}")
        if self.cx < 0 or self.cy < 0:
            raise ValueError(f"box center must be non-negative, got ({self.cx}, {self.cy})")
        if self.relative:
            if self.cx > 1 or self.cy > 1 or self.w > 1 or self.h > 1:
                raise ValueError(f"relative box out of range: {values}")

    @classmethod
    def from_xywh(cls, x_min, y_min, w, h):
        """Build a box from a COCO corner encoding ``[x_min, y_min, w, h]``."""
        return cls(x_min + w / 2.0, y_min + h / 2.0, w, h)

    def to_xywh(self):
        return [self.cx - self.w / 2.0, self.cy - self.h / 2.0, self.w, self.h]

    def as_array(self):
        return np.array([self.cx, self.cy, self.w, self.h], dtype=float)

    @property
    def area(self):
        return self.w * self.h


def xywh_to_cxcywh(boxes):
    """Convert an ``(n, 4)`` array of corner/size boxes to center/size."""
    boxes = np.asarray(boxes, dtype=float).reshape(-1, 4)
    out = boxes.copy()
    out[:, 0] = boxes[:, 0] + boxes[:, 2] / 2.0
    out[:, 1] = boxes[:, 1] + boxes[:, 3] / 2.0
    return out


def cxcywh_to_xywh(boxes):
    boxes = np.asarray(boxes, dtype=float).reshape(-1, 4)
    out = boxes.copy()
    out[:, 0] = boxes[:, 0] - boxes[:, 2] / 2.0
    out[:, 1] = boxes[:, 1] - boxes[:, 3] / 2.0
    return out


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two boxes in the same coordinate frame."""
    if a.w <= 0 or a.h <= 0 or b.w <= 0 or b.h <= 0:
        raise ValueError("iou is undefined for boxes with non-positive extent")
    if a == b:
        return 1.0
    ix = min(a.cx + a.w / 2, b.cx + b.w / 2) - max(a.cx - a.w / 2, b.cx - b.w / 2)
    iy = min(a.cy + a.h / 2, b.cy + b.h / 2) - max(a.cy - a.h / 2, b.cy - b.h / 2)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    union = a.w * a.h + b.w * b.h - inter
    return float(min(1.0, inter / union))


def iou_matrix(boxes_a, boxes_b):
    """Pairwise IoU between two ``(n, 4)`` and ``(m, 4)`` center/size arrays.

    Returns an ``(n, m)`` array. Identical rows yield exactly 1.
    """
    a = np.asarray(boxes_a, dtype=float).reshape(-1, 4)
    b = np.asarray(boxes_b, dtype=float).reshape(-1, 4)
    if len(a) == 0 or len(b) == 0:
        return np.zeros((len(a), len(b)))
    a_lo = a[:, :2] - a[:, 2:] / 2
    a_hi = a[:, :2] + a[:, 2:] / 2
    b_lo = b[:, :2] - b[:, 2:] / 2
    b_hi = b[:, :2] + b[:, 2:] / 2
    lo = np.maximum(a_lo[:, None, :], b_lo[None, :, :])
    hi = np.minimum(a_hi[:, None, :], b_hi[None, :, :])
    wh = np.clip(hi - lo, 0.0, None)
    inter = wh[..., 0] * wh[..., 1]
    area_a = a[:, 2] * a[:, 3]
    area_b = b[:, 2] * b[:, 3]
    union = area_a[:, None] + area_b[None, :] - inter
    out = np.minimum(inter / union, 1.0)
    same = np.all(a[:, None, :] == b[None, :, :], axis=-1)
    out[same] = 1.0
    return out


def normalize(box: BoundingBox, image_w, image_h) -> BoundingBox:
    """Express a pixel-frame box relative to the image size.

    Values are clamped to ``[0, 1]`` so that boxes overshooting the frame by a
    few pixels stay valid.
    """
    if image_w <= 0 or image_h <= 0:
        raise ValueError(f"image dimensions must be positive, got {image_w}x{image_h}")
    rel = normalize_array(box.as_array()[None, :], image_w, image_h)[0]
    return BoundingBox(*rel.tolist(), relative=True)


def normalize_array(boxes, image_w, image_h):
    """Vectorized :func:`normalize` over ``(n, 4)`` boxes.

    ``image_w`` and ``image_h`` may be scalars or per-row arrays.
    """
    image_w = np.asarray(image_w, dtype=float)
    image_h = np.asarray(image_h, dtype=float)
    if np.any(image_w <= 0) or np.any(image_h <= 0):
        raise ValueError("image dimensions must be positive")
    boxes = np.asarray(boxes, dtype=float).reshape(-1, 4)
    scale = np.stack([image_w, image_h, image_w, image_h], axis=-1)
    return np.clip(boxes / scale, 0.0, 1.0)
