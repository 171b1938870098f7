"""Multivariate histogram binning for detection confidences.

The calibrator partitions (confidence, box features) space with a
:class:`~detcal.metrics.BinningScheme` and replaces each confidence by the
precision its bin had on the training data.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .geometry import normalize_array
from .metrics import BinningScheme, bin_sums, flat_bin_indices
from .samples import FeatureSubset, SampleSet

FORMAT_NAME = "detcal-histogram-calibrator"
FORMAT_VERSION = 1
FALLBACKS = ("identity", "global", "nearest")


class HistogramCalibrator(TransformerMixin, BaseEstimator):
    """Histogram-binning calibrator over confidence and optional box features.

    Parameters
    ----------
    subset : str or FeatureSubset, default="conf"
        Feature columns expected in ``X``: ``conf`` (p), ``conf_center``
        (p, cx, cy), ``conf_scale`` (p, h, w) or ``full`` (p, cx, cy, h, w).
    bins : int or tuple of int, optional
        Bins per dimension. Defaults to 15 for ``conf``, 5 per dimension for
        the three-feature subsets and 3 per dimension for ``full``.
    ranges : sequence of (lo, hi), optional
        Value range per dimension, ``(0, 1)`` by default.
    fallback : {"identity", "global", "nearest"}, default="identity"
        Value for inputs landing in a bin without training data: the raw
        confidence, the overall training precision, or the precision of the
        nearest occupied bin (in bin-index space).

    Attributes
    ----------
    scheme_ : BinningScheme
    table_ : ndarray of shape (n_bins_total,)
        Training precision per flat bin index, NaN for empty bins.
    counts_ : ndarray of shape (n_bins_total,)
    global_precision_ : float
    """

    def __init__(self, subset="conf", bins=None, ranges=None, fallback="identity"):
        self.subset = subset
        self.bins = bins
        self.ranges = ranges
        self.fallback = fallback

    def _make_scheme(self):
        subset = FeatureSubset.parse(self.subset)
        scheme = BinningScheme.for_calibration(subset, self.bins)
        if self.ranges is not None:
            scheme = BinningScheme(subset, scheme.bins, self.ranges)
        return scheme

    def fit(self, X, y=None):
        """Fit on features ``X`` (confidence first) and 0/1 match flags ``y``.

        ``X`` may also be a :class:`SampleSet`, in which case ``y`` is taken
        from its match flags.
        """
        if self.fallback not in FALLBACKS:
            raise ValueError(f"fallback must be one of {FALLBACKS}, got {self.fallback!r}")
        scheme = self._make_scheme()
        if isinstance(X, SampleSet):
            X, y = X.features(scheme.subset), X.matched
        if y is None:
            raise ValueError("match flags y are required")
        if len(X) == 0:
            raise ValueError("cannot fit a calibrator on an empty training set")
        X, y = check_X_y(X, y, ensure_2d=False, dtype=float)
        X = X.reshape(len(y), -1)
        if X.shape[1] != scheme.subset.ndim:
            raise ValueError(f"subset {scheme.subset.value!r} expects {scheme.subset.ndim} columns, got {X.shape[1]}")
        if not np.isin(y, (0, 1)).all():
            raise ValueError("match flags must be 0 or 1")
        counts, _, sum_match = bin_sums(X[:, 0], y, flat_bin_indices(X, scheme), scheme.n_total)
        with np.errstate(invalid="ignore", divide="ignore"):
            table = np.where(counts > 0, sum_match / counts, np.nan)
        self.scheme_ = scheme
        self.table_ = table
        self.counts_ = counts
        self.global_precision_ = float(y.mean())
        self.n_features_in_ = X.shape[1]
        return self

    def _fallback_values(self, X, flat):
        if self.fallback == "identity":
            return X[:, 0]
        if self.fallback == "global":
            return np.full(len(flat), self.global_precision_)
        occupied = np.flatnonzero(self.counts_ > 0)
        occ_multi = np.column_stack(np.unravel_index(occupied, self.scheme_.bins))
        query = np.column_stack(np.unravel_index(flat, self.scheme_.bins))
        dist = ((query[:, None, :] - occ_multi[None, :, :]) ** 2).sum(axis=-1)
        return self.table_[occupied[np.argmin(dist, axis=1)]]

    def transform(self, X):
        """Calibrated confidences, shape ``(n_samples,)``."""
        check_is_fitted(self, "table_")
        if isinstance(X, SampleSet):
            X = X.features(self.scheme_.subset)
        X = check_array(X, ensure_2d=False, dtype=float, ensure_min_samples=0)
        if len(X) == 0:
            return np.empty(0)
        X = X.reshape(len(X), -1)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} feature columns, got {X.shape[1]}")
        lo = np.array([r[0] for r in self.scheme_.ranges])
        hi = np.array([r[1] for r in self.scheme_.ranges])
        flat = flat_bin_indices(np.clip(X, lo, hi), self.scheme_)
        out = self.table_[flat]
        empty = np.isnan(out)
        if empty.any():
            out[empty] = self._fallback_values(X[empty], flat[empty])
        return np.clip(out, 0.0, 1.0)

    predict = transform

    def to_dict(self):
        check_is_fitted(self, "table_")
        return {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "scheme": self.scheme_.to_dict(),
            "fallback": self.fallback,
            "global_precision": self.global_precision_,
            "counts": self.counts_.astype(int).tolist(),
            "table": [None if np.isnan(v) else float(v) for v in self.table_],
        }

    @classmethod
    def from_dict(cls, doc):
        if doc.get("format") != FORMAT_NAME:
            raise ValueError(f"not a calibrator document (format={doc.get('format')!r})")
        if doc.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported calibrator version {doc.get('version')!r}")
        scheme = BinningScheme.from_dict(doc["scheme"])
        table = np.array([np.nan if v is None else v for v in doc["table"]], dtype=float)
        counts = np.asarray(doc["counts"], dtype=np.int64)
        if len(table) != scheme.n_total or len(counts) != scheme.n_total:
            raise ValueError("calibrator table size does not match its binning scheme")
        if np.any((table < 0) | (table > 1)):
            raise ValueError("calibrator table entries must lie in [0, 1]")
        est = cls(subset=scheme.subset.value, bins=scheme.bins, ranges=scheme.ranges, fallback=doc["fallback"])
        est.scheme_ = scheme
        est.table_ = table
        est.counts_ = counts
        est.global_precision_ = float(doc["global_precision"])
        est.n_features_in_ = scheme.subset.ndim
        return est


def fit(train_samples, scheme: BinningScheme, fallback="identity"):
    """Fit a :class:`HistogramCalibrator` with an explicit binning scheme."""
    train_samples = SampleSet.coerce(train_samples)
    est = HistogramCalibrator(subset=scheme.subset.value, bins=scheme.bins, ranges=scheme.ranges,
                              fallback=fallback)
    return est.fit(train_samples)


def apply(calibrator: HistogramCalibrator, sample):
    x = np.array([[getattr(sample, c) for c in calibrator.scheme_.subset.columns]])
    return float(calibrator.transform(x)[0])


def apply_all(calibrator: HistogramCalibrator, samples):
    """Samples with their confidences replaced by calibrated values."""
    samples = SampleSet.coerce(samples)
    if len(samples) == 0:
        return samples
    return samples.with_confidence(calibrator.transform(samples))


def calibrate_detections(calibrator: HistogramCalibrator, detections, images):
    """Replace detection scores with calibrated ones (box features taken relative to each image)."""
    detections = list(detections)
    if not detections:
        return []
    index = images if isinstance(images, dict) else {im.image_id: im for im in images}
    boxes = np.array([d.box.as_array() for d in detections])
    sizes = np.array([(index[d.image_id].width, index[d.image_id].height) for d in detections], dtype=float)
    rel = normalize_array(boxes, sizes[:, 0], sizes[:, 1])
    columns = {"confidence": np.array([d.confidence for d in detections]),
               "cx": rel[:, 0], "cy": rel[:, 1], "w": rel[:, 2], "h": rel[:, 3]}
    X = np.column_stack([columns[c] for c in calibrator.scheme_.subset.columns])
    calibrated = calibrator.transform(X)
    return [d.with_confidence(c) for d, c in zip(detections, calibrated)]
