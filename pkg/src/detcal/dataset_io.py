"""Reading and writing detections and ground truth in COCO-style JSON.

Ground-truth files follow the COCO annotation layout (only the fields used
here are required)::

    {"images": [{"id": 1, "width": 640, "height": 480}, ...],
     "annotations": [{"id": 7, "image_id": 1, "category_id": 1,
                      "bbox": [x_min, y_min, w, h], "iscrowd": 0}, ...],
     "categories": [{"id": 1, "name": "person"}]}

Detection files follow the COCO results layout, a JSON array of::

    {"image_id": 1, "category_id": 1, "bbox": [x_min, y_min, w, h], "score": 0.73}

Boxes are converted to center/size encoding when loaded.
"""
from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Hashable

from .geometry import BoundingBox


class DataFormatError(ValueError):
    """Raised when an input file does not follow the documented schema."""


@dataclass(frozen=True)
class ImageInfo:
    image_id: Hashable
    width: float
    height: float

    def __post_init__(self):
        if isinstance(self.width, bool) or isinstance(self.height, bool):
            raise TypeError("image size must be numeric")
        if not self.width > 0 or not self.height > 0:
            raise ValueError(
                f"image {self.image_id!r} must have positive size, got {self.width}x{self.height}"
            )


@dataclass(frozen=True)
class GroundTruthObject:
    image_id: Hashable
    category: Hashable
    box: BoundingBox
    crowd: bool = False


@dataclass(frozen=True)
class Detection:
    image_id: Hashable
    category: Hashable
    confidence: float
    box: BoundingBox

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must lie in [0, 1], got {self.confidence}")

    def with_confidence(self, confidence):
        return Detection(self.image_id, self.category, float(confidence), self.box)


def _read_json(path):
    with open(path, encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"{path}: invalid JSON ({exc})") from exc


def _parse_bbox(raw, where):
    if not isinstance(raw, (list, tuple)) or len(raw) != 4:
        raise DataFormatError(f"{where}: bbox must be a list of 4 numbers")
    try:
        x, y, w, h = (float(v) for v in raw)
    except (TypeError, ValueError) as exc:
        raise DataFormatError(f"{where}: bbox must be numeric") from exc
    if w <= 0 or h <= 0:
        raise DataFormatError(f"{where}: bbox has non-positive extent {raw}")
    try:
        return BoundingBox.from_xywh(x, y, w, h)
    except ValueError as exc:
        raise DataFormatError(f"{where}: {exc}") from exc


def load_ground_truth(path):
    """Load ground-truth boxes and image sizes from a COCO annotation file.

    Returns
    -------
    ground_truths : list of GroundTruthObject
    images : list of ImageInfo
    """
    doc = _read_json(path)
    if not isinstance(doc, dict) or "images" not in doc or "annotations" not in doc:
        raise DataFormatError(f"{path}: expected an object with 'images' and 'annotations'")

    images = []
    for i, rec in enumerate(doc["images"]):
        try:
            images.append(ImageInfo(rec["id"], rec["width"], rec["height"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataFormatError(f"{path}: images[{i}] is invalid ({exc})") from exc
    known = {img.image_id for img in images}
    if len(known) != len(images):
        raise DataFormatError(f"{path}: duplicate image ids")

    ground_truths = []
    for i, rec in enumerate(doc["annotations"]):
        where = f"{path}: annotations[{i}]"
        try:
            image_id, category, bbox = rec["image_id"], rec["category_id"], rec["bbox"]
        except (KeyError, TypeError) as exc:
            raise DataFormatError(f"{where} is missing {exc}") from exc
        if image_id not in known:
            raise DataFormatError(f"{where} references unknown image_id {image_id!r}")
        box = _parse_bbox(bbox, where)
        ground_truths.append(GroundTruthObject(image_id, category, box, bool(rec.get("iscrowd", 0))))
    return ground_truths, images


def load_detections(path):
    """Load detections from a COCO results file (a JSON array)."""
    doc = _read_json(path)
    if not isinstance(doc, list):
        raise DataFormatError(f"{path}: expected a JSON array of detections")
    detections = []
    for i, rec in enumerate(doc):
        where = f"{path}: [{i}]"
        try:
            image_id, category, bbox, score = rec["image_id"], rec["category_id"], rec["bbox"], rec["score"]
        except (KeyError, TypeError) as exc:
            raise DataFormatError(f"{where} is missing {exc}") from exc
        try:
            score = float(score)
        except (TypeError, ValueError) as exc:
            raise DataFormatError(f"{where}: score must be numeric") from exc
        if not 0.0 <= score <= 1.0:
            raise DataFormatError(f"{where}: score {score} outside [0, 1]")
        detections.append(Detection(image_id, category, score, _parse_bbox(bbox, where)))
    return detections


def check_references(detections, images):
    """Raise if any detection refers to an image without size information."""
    known = {img.image_id for img in images}
    missing = sorted({str(d.image_id) for d in detections if d.image_id not in known})
    if missing:
        raise DataFormatError(f"detections reference unknown image ids: {', '.join(missing[:5])}")


def filter_category(detections, ground_truths, category):
    """Keep only records of one class; relative order is preserved."""
    return (
        [d for d in detections if d.category == category],
        [g for g in ground_truths if g.category == category],
    )


def ground_truth_document(ground_truths, images, categories=None):
    annotations = []
    for i, gt in enumerate(ground_truths, start=1):
        annotations.append({
            "id": i,
            "image_id": gt.image_id,
            "category_id": gt.category,
            "bbox": gt.box.to_xywh(),
            "area": gt.box.area,
            "iscrowd": int(gt.crowd),
        })
    if categories is None:
        categories = [{"id": c} for c in sorted({g.category for g in ground_truths}, key=str)]
    return {
        "images": [{"id": im.image_id, "width": im.width, "height": im.height} for im in images],
        "annotations": annotations,
        "categories": categories,
    }


def detections_document(detections):
    return [
        {"image_id": d.image_id, "category_id": d.category, "bbox": d.box.to_xywh(), "score": d.confidence}
        for d in detections
    ]


def atomic_write_text(path, text):
    """Write ``text`` to ``path`` through a temporary file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dump_json(path, doc):
    atomic_write_text(path, json.dumps(doc, indent=1) + "\n")


def save_ground_truth(path, ground_truths, images, categories=None):
    dump_json(path, ground_truth_document(ground_truths, images, categories))


def save_detections(path, detections):
    dump_json(path, detections_document(detections))
