"""Repeated split/fit/evaluate runs over pipeline variants, IoU levels and feature subsets.

Seeds: the split of repeat ``r`` is drawn from
``numpy.random.SeedSequence([master_seed, r])``. Every (variant, IoU,
subset) cell of the grid uses the same per-repeat seed, so a report is fully
determined by the master seed and does not depend on execution order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed

from .calibration import HistogramCalibrator, calibrate_detections
from .matching import MatchConfig, match
from .metrics import (
    DEFAULT_MIN_BIN_COUNT,
    BinningScheme,
    NoRetainedSamplesError,
    compute_d_ece,
    position_heatmap,
    reliability_data,
)
from .postprocess import Nms, PipelineConfig, confidence_threshold, group_by_image, run_pipeline
from .samples import FeatureSubset, SampleSet

REPORT_FORMAT = "detcal-experiment-report"
REPORT_VERSION = 1


def repeat_rng(seed, repeat):
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(repeat)]))


def split(samples, ratio=0.7, seed=0, by="sample", rng=None):
    """Random train/test partition without replacement.

    ``by="sample"`` shuffles individual samples and puts ``floor(ratio * n)``
    of them in the training part. ``by="image"`` shuffles images instead and
    keeps all samples of an image on the same side.
    """
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"split ratio must lie in (0, 1), got {ratio}")
    samples = SampleSet.coerce(samples)
    n = len(samples)
    if n < 2:
        raise ValueError(f"need at least 2 samples to split, got {n}")
    if rng is None:
        rng = np.random.default_rng(seed)
    if by == "sample":
        perm = rng.permutation(n)
        n_train = math.floor(ratio * n)
        train_idx, test_idx = np.sort(perm[:n_train]), np.sort(perm[n_train:])
    elif by == "image":
        ids = list(dict.fromkeys(samples.image_id.tolist()))
        if len(ids) < 2:
            raise ValueError("need at least 2 images for an image-level split")
        perm = rng.permutation(len(ids))
        train_ids = {ids[i] for i in perm[:math.floor(ratio * len(ids))]}
        in_train = np.array([i in train_ids for i in samples.image_id], dtype=bool)
        train_idx, test_idx = np.flatnonzero(in_train), np.flatnonzero(~in_train)
    else:
        raise ValueError(f"split must be by 'sample' or 'image', got {by!r}")
    return samples[train_idx], samples[test_idx]


def default_variants():
    return {
        "white-box": PipelineConfig.standard(None),
        "NMS@0.5": PipelineConfig.standard(0.5),
        "NMS@0.75": PipelineConfig.standard(0.75),
        "NMS@0.9": PipelineConfig.standard(0.9),
    }


@dataclass
class ExperimentConfig:
    """Grid and protocol settings of an experiment.

    ``eval_bins`` and ``calib_bins`` map subset names to bin-count overrides;
    missing entries fall back to the defaults (20/8/8/5 for evaluation,
    15/5/5/3 for calibration).
    """

    variants: dict = field(default_factory=default_variants)
    iou_thresholds: tuple = (0.5, 0.6, 0.75)
    subsets: tuple = tuple(s.value for s in FeatureSubset)
    split_ratio: float = 0.7
    repeats: int = 20
    seed: int = 0
    eval_bins: dict = field(default_factory=dict)
    calib_bins: dict = field(default_factory=dict)
    min_bin_count: int = DEFAULT_MIN_BIN_COUNT
    weighting: str = "retained"
    split_by: str = "sample"
    exclude_crowd: bool = True
    fallback: str = "identity"
    figure_iou: float = None
    grid_n: int = 8
    n_conf_bins: int = 20
    n_jobs: int = 1

    def __post_init__(self):
        if not 0.0 < self.split_ratio < 1.0:
            raise ValueError(f"split_ratio must lie in (0, 1), got {self.split_ratio}")
        if self.repeats < 1:
            raise ValueError(f"repeats must be at least 1, got {self.repeats}")
        if self.min_bin_count < 1:
            raise ValueError("min_bin_count must be at least 1")
        if not self.variants:
            raise ValueError("at least one pipeline variant is required")
        if not self.iou_thresholds:
            raise ValueError("at least one IoU threshold is required")
        self.iou_thresholds = tuple(float(t) for t in self.iou_thresholds)
        for t in self.iou_thresholds:
            MatchConfig(t)
        self.subsets = tuple(FeatureSubset.parse(s).value for s in self.subsets)
        if not self.subsets:
            raise ValueError("at least one feature subset is required")
        self.variants = {
            name: v if isinstance(v, PipelineConfig) else PipelineConfig.from_list(v)
            for name, v in self.variants.items()
        }
        self.eval_bins = {FeatureSubset.parse(k).value: v for k, v in self.eval_bins.items()}
        self.calib_bins = {FeatureSubset.parse(k).value: v for k, v in self.calib_bins.items()}

    def eval_scheme(self, subset):
        return BinningScheme.for_evaluation(subset, self.eval_bins.get(FeatureSubset.parse(subset).value))

    def calib_scheme(self, subset):
        return BinningScheme.for_calibration(subset, self.calib_bins.get(FeatureSubset.parse(subset).value))

    @property
    def plot_iou(self):
        if self.figure_iou is not None:
            return float(self.figure_iou)
        return 0.6 if 0.6 in self.iou_thresholds else self.iou_thresholds[0]

    def to_dict(self):
        return {
            "variants": {name: v.to_list() for name, v in self.variants.items()},
            "iou_thresholds": list(self.iou_thresholds),
            "subsets": list(self.subsets),
            "split_ratio": self.split_ratio,
            "repeats": self.repeats,
            "seed": self.seed,
            "eval_bins": {s: list(self.eval_scheme(s).bins) for s in self.subsets},
            "calib_bins": {s: list(self.calib_scheme(s).bins) for s in self.subsets},
            "min_bin_count": self.min_bin_count,
            "weighting": self.weighting,
            "split_by": self.split_by,
            "exclude_crowd": self.exclude_crowd,
            "fallback": self.fallback,
            "figure_iou": self.plot_iou,
            "grid_n": self.grid_n,
            "n_conf_bins": self.n_conf_bins,
        }


@dataclass
class TrialResult:
    baseline: object
    calibrated: object
    n_train: int
    n_test: int


def evaluate_split(train, test, calib_scheme, eval_scheme, min_bin_count=DEFAULT_MIN_BIN_COUNT,
                   weighting="retained", fallback="identity"):
    """Fit on ``train`` and score raw and calibrated ``test`` samples."""
    est = HistogramCalibrator(calib_scheme.subset.value, calib_scheme.bins, calib_scheme.ranges, fallback)
    est.fit(train)
    calibrated = test.with_confidence(est.transform(test))
    return TrialResult(
        baseline=compute_d_ece(test, eval_scheme, min_bin_count, weighting, keep_bins=False),
        calibrated=compute_d_ece(calibrated, eval_scheme, min_bin_count, weighting, keep_bins=False),
        n_train=len(train),
        n_test=len(test),
    )


def run_trial(detections, ground_truths, images, variant, iou_threshold, subset, seed,
              config: ExperimentConfig = None, repeat=0):
    """One pipeline -> match -> split -> fit -> evaluate pass.

    Returns a :class:`TrialResult` with baseline and calibrated reports.
    """
    config = config or ExperimentConfig()
    if not isinstance(variant, PipelineConfig):
        variant = config.variants[variant]
    processed = run_pipeline(detections, variant)
    samples = match(processed, ground_truths, images, MatchConfig(iou_threshold, config.exclude_crowd))
    train, test = split(samples, config.split_ratio, by=config.split_by, rng=repeat_rng(seed, repeat))
    return evaluate_split(train, test, config.calib_scheme(subset), config.eval_scheme(subset),
                          config.min_bin_count, config.weighting, config.fallback)


@dataclass
class ExperimentRow:
    variant: str
    iou_threshold: float
    subset: str
    sample_count: int
    n_bins_total: int
    baseline: list = field(default_factory=list)
    calibrated: list = field(default_factory=list)
    baseline_neglected: list = field(default_factory=list)
    calibrated_neglected: list = field(default_factory=list)
    baseline_unretained: list = field(default_factory=list)

    @property
    def baseline_mean(self):
        return float(np.mean(self.baseline))

    @property
    def calibrated_mean(self):
        return float(np.mean(self.calibrated))

    def to_dict(self):
        return {
            "variant": self.variant,
            "iou_threshold": self.iou_threshold,
            "subset": self.subset,
            "sample_count": self.sample_count,
            "n_bins_total": self.n_bins_total,
            "baseline_mean": self.baseline_mean,
            "calibrated_mean": self.calibrated_mean,
            "baseline": list(self.baseline),
            "calibrated": list(self.calibrated),
            "baseline_neglected_bins": list(self.baseline_neglected),
            "calibrated_neglected_bins": list(self.calibrated_neglected),
            "baseline_unretained_bins": list(self.baseline_unretained),
        }

    @classmethod
    def from_dict(cls, doc):
        return cls(doc["variant"], doc["iou_threshold"], doc["subset"], doc["sample_count"],
                   doc["n_bins_total"], list(doc["baseline"]), list(doc["calibrated"]),
                   list(doc["baseline_neglected_bins"]), list(doc["calibrated_neglected_bins"]),
                   list(doc["baseline_unretained_bins"]))


@dataclass
class ExperimentReport:
    config: dict
    rows: list
    sample_counts: dict
    figures: list = field(default_factory=list)
    calibrate_then_nms: dict = None

    def row(self, variant, iou_threshold, subset):
        subset = FeatureSubset.parse(subset).value
        for r in self.rows:
            if r.variant == variant and r.iou_threshold == iou_threshold and r.subset == subset:
                return r
        raise KeyError((variant, iou_threshold, subset))

    def to_dict(self):
        doc = {
            "format": REPORT_FORMAT,
            "version": REPORT_VERSION,
            "config": self.config,
            "sample_counts": self.sample_counts,
            "rows": [r.to_dict() for r in self.rows],
            "figures": self.figures,
        }
        if self.calibrate_then_nms is not None:
            doc["calibrate_then_nms"] = self.calibrate_then_nms
        return doc

    @classmethod
    def from_dict(cls, doc):
        if doc.get("format") != REPORT_FORMAT:
            raise ValueError(f"not an experiment report (format={doc.get('format')!r})")
        return cls(doc["config"], [ExperimentRow.from_dict(r) for r in doc["rows"]],
                   doc["sample_counts"], doc.get("figures", []), doc.get("calibrate_then_nms"))


def _grid_cell(samples, variant_name, iou_threshold, config):
    rows = {
        s: ExperimentRow(variant_name, iou_threshold, s, len(samples), config.eval_scheme(s).n_total)
        for s in config.subsets
    }
    for r in range(config.repeats):
        train, test = split(samples, config.split_ratio, by=config.split_by, rng=repeat_rng(config.seed, r))
        for s in config.subsets:
            res = evaluate_split(train, test, config.calib_scheme(s), config.eval_scheme(s),
                                 config.min_bin_count, config.weighting, config.fallback)
            row = rows[s]
            row.baseline.append(res.baseline.d_ece)
            row.calibrated.append(res.calibrated.d_ece)
            row.baseline_neglected.append(res.baseline.neglected_bin_count)
            row.calibrated_neglected.append(res.calibrated.neglected_bin_count)
            row.baseline_unretained.append(res.baseline.unretained_bin_count)
    return [rows[s] for s in config.subsets]


def _safe_d_ece(samples, scheme, min_bin_count, weighting):
    try:
        return compute_d_ece(samples, scheme, min_bin_count, weighting, keep_bins=False).d_ece
    except NoRetainedSamplesError:
        return None


def _figures(samples, variant_name, config):
    """Reliability and heatmap data of repeat 0 at the figure IoU, before and after calibration."""
    train, test = split(samples, config.split_ratio, by=config.split_by, rng=repeat_rng(config.seed, 0))
    conf_scheme = config.eval_scheme(FeatureSubset.CONF)
    center_scheme = config.eval_scheme(FeatureSubset.CONF_CENTER)
    est = HistogramCalibrator(fallback=config.fallback,
                              bins=config.calib_scheme(FeatureSubset.CONF).bins).fit(train)
    out = []
    for stage, part in (("baseline", test), ("calibrated", test.with_confidence(est.transform(test)))):
        out.append({
            "variant": variant_name,
            "iou_threshold": config.plot_iou,
            "stage": stage,
            "sample_count": len(part),
            "d_ece": _safe_d_ece(part, conf_scheme, config.min_bin_count, config.weighting),
            "reliability": reliability_data(part, config.n_conf_bins).to_dict(),
            "heatmap_d_ece": _safe_d_ece(part, center_scheme, config.min_bin_count, config.weighting),
            "heatmap": position_heatmap(part, config.grid_n, config.n_conf_bins, config.min_bin_count).to_dict(),
        })
    return out


def _variant_job(name, pipeline, detections, ground_truths, images, config):
    processed = run_pipeline(detections, pipeline)
    rows, figures = [], []
    for t in config.iou_thresholds:
        samples = match(processed, ground_truths, images, MatchConfig(t, config.exclude_crowd))
        rows.extend(_grid_cell(samples, name, t, config))
        if t == config.plot_iou:
            figures.extend(_figures(samples, name, config))
    return len(processed), rows, figures


def run_experiment(config: ExperimentConfig, data):
    """Run every (variant, IoU, subset) cell for ``config.repeats`` splits.

    Parameters
    ----------
    config : ExperimentConfig
    data : tuple of (detections, ground_truths, images)
        Inputs already restricted to one category.
    """
    detections, ground_truths, images = data
    images = {im.image_id: im for im in images} if not isinstance(images, dict) else images
    jobs = [
        delayed(_variant_job)(name, pipeline, detections, ground_truths, images, config)
        for name, pipeline in config.variants.items()
    ]
    if config.n_jobs == 1:
        results = [fn(*args, **kwargs) for fn, args, kwargs in jobs]
    else:
        results = Parallel(n_jobs=config.n_jobs)(jobs)
    rows, figures, counts = [], [], {}
    for name, (count, r, f) in zip(config.variants, results):
        counts[name] = count
        rows.extend(r)
        figures.extend(f)
    return ExperimentReport(config.to_dict(), rows, counts, figures)


@dataclass
class CalibrateThenNmsResult:
    pre_nms: object
    post_nms: object
    heatmap: object
    reliability: object
    n_train_images: int
    n_test_images: int

    def to_dict(self):
        return {
            "pre_nms": self.pre_nms.to_dict(include_bins=False),
            "post_nms": self.post_nms.to_dict(include_bins=False),
            "d_ece": self.post_nms.d_ece,
            "heatmap": self.heatmap.to_dict(),
            "reliability": self.reliability.to_dict(),
            "n_train_images": self.n_train_images,
            "n_test_images": self.n_test_images,
        }


def calibrate_then_nms(detections, ground_truths, images, calib_scheme, nms_threshold, iou_threshold,
                       subset=FeatureSubset.CONF, *, seed=0, split_ratio=0.7, base_pipeline=None,
                       eval_scheme=None, min_bin_count=DEFAULT_MIN_BIN_COUNT, weighting="retained",
                       rethreshold=None, grid_n=8, n_conf_bins=20, exclude_crowd=True, fallback="identity"):
    """Calibrate white-box detections, then suppress and re-evaluate.

    Images are split into training and test parts. The calibrator is fitted
    on matched white-box samples of the training images; test-image
    detections get calibrated scores, pass through NMS (and the optional
    ``rethreshold``), are matched again and scored.
    """
    images = {im.image_id: im for im in images} if not isinstance(images, dict) else images
    base_pipeline = base_pipeline or PipelineConfig()
    eval_scheme = eval_scheme or BinningScheme.for_evaluation(subset)
    mcfg = MatchConfig(iou_threshold, exclude_crowd)

    white = run_pipeline(detections, base_pipeline)
    image_ids = list(group_by_image(white).keys())
    if len(image_ids) < 2:
        raise ValueError("need detections on at least 2 images")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0]))
    perm = rng.permutation(len(image_ids))
    train_ids = {image_ids[i] for i in perm[:math.floor(split_ratio * len(image_ids))]}
    train_dets = [d for d in white if d.image_id in train_ids]
    test_dets = [d for d in white if d.image_id not in train_ids]

    est = HistogramCalibrator(calib_scheme.subset.value, calib_scheme.bins, calib_scheme.ranges, fallback)
    est.fit(match(train_dets, ground_truths, images, mcfg))

    calibrated = calibrate_detections(est, test_dets, images)
    pre = match(calibrated, ground_truths, images, mcfg)
    suppressed = run_pipeline(calibrated, PipelineConfig((Nms(nms_threshold),)))
    if rethreshold is not None:
        suppressed = confidence_threshold(suppressed, rethreshold)
    post = match(suppressed, ground_truths, images, mcfg)
    return CalibrateThenNmsResult(
        pre_nms=compute_d_ece(pre, eval_scheme, min_bin_count, weighting),
        post_nms=compute_d_ece(post, eval_scheme, min_bin_count, weighting),
        heatmap=position_heatmap(post, grid_n, n_conf_bins, min_bin_count),
        reliability=reliability_data(post, n_conf_bins),
        n_train_images=len(train_ids),
        n_test_images=len(image_ids) - len(train_ids),
    )
