"""Synthetic detections with known calibration behaviour.

Each image is cut into a grid of disjoint cells. Ground-truth boxes occupy
some cells; the rest are background. Every ground-truth box gets a cluster
of ``cluster_size`` detections that are copies of the box shifted by
``k * jitter`` pixels along x, so their pairwise IoU has an exact lower bound.

Confidence models
-----------------
``Constant(c)``
    Every cluster member sits on its object and reports ``c``. With
    ``c = 1/n`` exactly one member per cluster is a true positive, so the
    white-box output is perfectly calibrated while NMS survivors are not.
``TruePrecision()``
    Each member draws a latent precision ``p`` uniformly from ``p_range``,
    lands on its object with probability ``p`` (otherwise in a background
    cell) and reports ``p``.
``Distorted(temperature, shift)``
    As ``TruePrecision`` but reports ``distort(p, temperature, shift)``.

``box_noise`` (off by default) additionally perturbs each on-target member's
center and size by Gaussian noise relative to the object size, which makes
the match outcome depend on the IoU threshold. Exact cluster IoU floors only
hold with ``box_noise == 0``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset_io import Detection, GroundTruthObject, ImageInfo, save_detections, save_ground_truth
from .geometry import BoundingBox

MIN_CLUSTER_IOU = 0.9


def distort(p_true, temperature=1.0, shift=0.0):
    """Logistic temperature map ``sigmoid((logit(p) + shift) / temperature)``.

    Temperatures below one push confidences towards 0 and 1 (overconfidence),
    above one towards 0.5.
    """
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    p = np.asarray(p_true, dtype=float)
    if np.any((p <= 0) | (p >= 1)):
        raise ValueError("p_true must lie strictly inside (0, 1)")
    z = (np.log(p) - np.log1p(-p) + shift) / temperature
    out = 1.0 / (1.0 + np.exp(-z))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class Constant:
    confidence: float

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"constant confidence must lie in [0, 1], got {self.confidence}")


@dataclass(frozen=True)
class TruePrecision:
    pass


@dataclass(frozen=True)
class Distorted:
    temperature: float = 1.0
    shift: float = 0.0

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")


def confidence_model_from_dict(doc):
    kind = doc.get("type")
    if kind == "constant":
        return Constant(float(doc["confidence"]))
    if kind == "true_precision":
        return TruePrecision()
    if kind == "distorted":
        return Distorted(float(doc.get("temperature", 1.0)), float(doc.get("shift", 0.0)))
    raise ValueError(f"unknown confidence model {kind!r}")


def confidence_model_to_dict(model):
    if isinstance(model, Constant):
        return {"type": "constant", "confidence": model.confidence}
    if isinstance(model, TruePrecision):
        return {"type": "true_precision"}
    return {"type": "distorted", "temperature": model.temperature, "shift": model.shift}


@dataclass(frozen=True)
class GeneratorConfig:
    n_images: int = 100
    gt_per_image: int = 4
    cluster_size: int = 1
    confidence_model: object = field(default_factory=TruePrecision)
    jitter: float = 0.5
    fp_rate: float = 0.0
    seed: int = 0
    image_width: int = 640
    image_height: int = 480
    p_range: tuple = (0.02, 0.98)
    fp_confidence: float = None
    box_noise: float = 0.0
    category: int = 1
    category_name: str = "person"

    def __post_init__(self):
        if self.n_images < 1:
            raise ValueError("n_images must be at least 1")
        if self.gt_per_image < 0:
            raise ValueError("gt_per_image must be non-negative")
        if self.cluster_size < 1:
            raise ValueError("cluster_size must be at least 1")
        if self.fp_rate < 0:
            raise ValueError("fp_rate must be non-negative")
        if self.jitter < 0:
            raise ValueError("jitter must be non-negative")
        if not 0 <= self.box_noise < 0.5:
            raise ValueError("box_noise must lie in [0, 0.5)")
        lo, hi = self.p_range
        if not 0 < lo <= hi < 1:
            raise ValueError(f"p_range must satisfy 0 < lo <= hi < 1, got {self.p_range}")
        if self.fp_confidence is not None and not 0 <= self.fp_confidence <= 1:
            raise ValueError("fp_confidence must lie in [0, 1]")
        if self.image_width <= 0 or self.image_height <= 0:
            raise ValueError("image size must be positive")

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc)
        if "confidence_model" in doc:
            doc["confidence_model"] = confidence_model_from_dict(doc["confidence_model"])
        if "p_range" in doc:
            doc["p_range"] = tuple(doc["p_range"])
        return cls(**doc)

    def to_dict(self):
        return {
            "n_images": self.n_images, "gt_per_image": self.gt_per_image,
            "cluster_size": self.cluster_size,
            "confidence_model": confidence_model_to_dict(self.confidence_model),
            "jitter": self.jitter, "fp_rate": self.fp_rate, "seed": self.seed,
            "image_width": self.image_width, "image_height": self.image_height,
            "p_range": list(self.p_range), "fp_confidence": self.fp_confidence,
            "box_noise": self.box_noise,
            "category": self.category, "category_name": self.category_name,
        }


def _grid(cfg):
    n_cells = cfg.gt_per_image + max(1, cfg.gt_per_image)
    cols = math.ceil(math.sqrt(n_cells))
    rows = math.ceil(n_cells / cols)
    return n_cells, cols, rows, cfg.image_width / cols, cfg.image_height / rows


def cluster_iou_floor(box_width, cluster_size, jitter):
    """Smallest IoU between two members of one cluster (also their IoU floor with the object)."""
    d = (cluster_size - 1) * jitter
    return (box_width - d) / (box_width + d)


def min_box_width(cfg):
    return 0.3 * _grid(cfg)[3]


def _check_geometry(cfg):
    _, _, _, cell_w, cell_h = _grid(cfg)
    d = (cfg.cluster_size - 1) * cfg.jitter
    w_min = 0.3 * cell_w
    if 0.3 * cell_h < 2 or w_min < 2:
        raise ValueError(f"infeasible geometry: cells of {cell_w:.1f}x{cell_h:.1f} px are too small")
    if 0.6 * cell_w + 2 * d + 2 > cell_w:
        raise ValueError("infeasible geometry: cluster jitter does not fit inside a cell")
    if cluster_iou_floor(w_min, cfg.cluster_size, cfg.jitter) <= MIN_CLUSTER_IOU:
        raise ValueError(
            f"infeasible geometry: cluster IoU floor falls to "
            f"{cluster_iou_floor(w_min, cfg.cluster_size, cfg.jitter):.3f} (needs > {MIN_CLUSTER_IOU})"
        )


def _place_box(rng, x0, y0, cell_w, cell_h, margin):
    w = rng.uniform(0.3, 0.6) * cell_w
    h = rng.uniform(0.3, 0.6) * cell_h
    cx = rng.uniform(x0 + w / 2 + 1, x0 + cell_w - w / 2 - 1 - margin)
    cy = rng.uniform(y0 + h / 2 + 1, y0 + cell_h - h / 2 - 1)
    return cx, cy, w, h


def _confidence(model, rng, p_range):
    """Return ``(reported confidence, latent precision)``; latent is None for Constant."""
    if isinstance(model, Constant):
        return model.confidence, None
    p = rng.uniform(*p_range)
    if isinstance(model, TruePrecision):
        return p, p
    return distort(p, model.temperature, model.shift), p


def generate(config: GeneratorConfig):
    """Generate ``(images, ground_truths, detections)`` deterministically from ``config.seed``."""
    _check_geometry(config)
    rng = np.random.default_rng(config.seed)
    n_cells, cols, _, cell_w, cell_h = _grid(config)
    margin = (config.cluster_size - 1) * config.jitter
    images, ground_truths, detections = [], [], []
    for image_id in range(1, config.n_images + 1):
        images.append(ImageInfo(image_id, config.image_width, config.image_height))
        cells = rng.permutation(n_cells)
        gt_cells, bg_cells = cells[:config.gt_per_image], cells[config.gt_per_image:]
        origins = [((c % cols) * cell_w, (c // cols) * cell_h) for c in range(n_cells)]

        def background_box(w, h):
            x0, y0 = origins[bg_cells[rng.integers(len(bg_cells))]]
            cx = rng.uniform(x0 + w / 2 + 1, x0 + cell_w - w / 2 - 1)
            cy = rng.uniform(y0 + h / 2 + 1, y0 + cell_h - h / 2 - 1)
            return BoundingBox(cx, cy, w, h)

        for cell in gt_cells:
            cx, cy, w, h = _place_box(rng, *origins[cell], cell_w, cell_h, margin)
            ground_truths.append(GroundTruthObject(image_id, config.category, BoundingBox(cx, cy, w, h)))
            for k in range(config.cluster_size):
                conf, latent = _confidence(config.confidence_model, rng, config.p_range)
                on_target = latent is None or rng.random() < latent
                if on_target and config.box_noise > 0:
                    e = rng.normal(0.0, config.box_noise, 4)
                    box = BoundingBox(cx + k * config.jitter + e[0] * w, cy + e[1] * h,
                                      w * math.exp(e[2]), h * math.exp(e[3]))
                elif on_target:
                    box = BoundingBox(cx + k * config.jitter, cy, w, h)
                else:
                    box = background_box(w, h)
                detections.append(Detection(image_id, config.category, float(conf), box))

        n_fp = int(config.fp_rate)
        if rng.random() < config.fp_rate - n_fp:
            n_fp += 1
        for _ in range(n_fp):
            conf, _ = _confidence(config.confidence_model, rng, config.p_range)
            if config.fp_confidence is not None:
                conf = config.fp_confidence
            w = rng.uniform(0.3, 0.6) * cell_w
            h = rng.uniform(0.3, 0.6) * cell_h
            detections.append(Detection(image_id, config.category, float(conf), background_box(w, h)))
    return images, ground_truths, detections


def write(config: GeneratorConfig, out_dir):
    """Generate and write ``ground_truth.json`` and ``detections.json`` into ``out_dir``."""
    images, gts, dets = generate(config)
    out_dir = Path(out_dir)
    categories = [{"id": config.category, "name": config.category_name}]
    save_ground_truth(out_dir / "ground_truth.json", gts, images, categories)
    save_detections(out_dir / "detections.json", dets)
    return out_dir / "ground_truth.json", out_dir / "detections.json"
