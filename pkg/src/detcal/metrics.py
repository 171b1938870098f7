"""Multidimensional binning and the detection expected calibration error.

Every feature axis is cut into equal-width bins over a fixed range (``[0, 1]``
by default). Intervals are left-closed and right-open except the last one,
which also holds the upper range limit. Bins with fewer than
``min_bin_count`` samples are left out of the score, and the remaining bin
weights are renormalized over the retained samples.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .samples import FeatureSubset, SampleSet

EVALUATION_BINS = {
    FeatureSubset.CONF: 20,
    FeatureSubset.CONF_CENTER: 8,
    FeatureSubset.CONF_SCALE: 8,
    FeatureSubset.FULL: 5,
}
CALIBRATION_BINS = {
    FeatureSubset.CONF: 15,
    FeatureSubset.CONF_CENTER: 5,
    FeatureSubset.CONF_SCALE: 5,
    FeatureSubset.FULL: 3,
}
DEFAULT_MIN_BIN_COUNT = 8


class NoRetainedSamplesError(ValueError):
    """Every bin fell below the minimum sample count."""


@dataclass(frozen=True)
class BinningScheme:
    """Equal-width partition of the feature space of one subset.

    Parameters
    ----------
    subset : FeatureSubset or str
    bins : int or sequence of int
        Bins per dimension; an int is used for every dimension.
    ranges : sequence of (lo, hi), optional
        Per-dimension value range, ``(0, 1)`` everywhere by default.
    """

    subset: FeatureSubset
    bins: tuple
    ranges: tuple = None

    def __post_init__(self):
        subset = FeatureSubset.parse(self.subset)
        object.__setattr__(self, "subset", subset)
        bins = self.bins
        if np.isscalar(bins):
            bins = (bins,) * subset.ndim
        bins = tuple(int(b) for b in bins)
        if len(bins) != subset.ndim:
            raise ValueError(f"{subset.value} needs {subset.ndim} bin counts, got {len(bins)}")
        if any(b < 1 for b in bins):
            raise ValueError(f"bin counts must be positive, got {bins}")
        object.__setattr__(self, "bins", bins)
        ranges = self.ranges
        if ranges is None:
            ranges = ((0.0, 1.0),) * subset.ndim
        ranges = tuple((float(lo), float(hi)) for lo, hi in ranges)
        if len(ranges) != subset.ndim or any(not hi > lo for lo, hi in ranges):
            raise ValueError(f"invalid ranges {ranges} for {subset.value}")
        object.__setattr__(self, "ranges", ranges)

    @classmethod
    def for_evaluation(cls, subset, bins=None):
        subset = FeatureSubset.parse(subset)
        return cls(subset, EVALUATION_BINS[subset] if bins is None else bins)

    @classmethod
    def for_calibration(cls, subset, bins=None):
        subset = FeatureSubset.parse(subset)
        return cls(subset, CALIBRATION_BINS[subset] if bins is None else bins)

    @property
    def n_total(self):
        return int(np.prod(self.bins))

    def edges(self):
        return [np.linspace(lo, hi, n + 1) for (lo, hi), n in zip(self.ranges, self.bins)]

    def to_dict(self):
        return {"subset": self.subset.value, "bins": list(self.bins), "ranges": [list(r) for r in self.ranges]}

    @classmethod
    def from_dict(cls, doc):
        return cls(doc["subset"], tuple(doc["bins"]), tuple(tuple(r) for r in doc["ranges"]))


def bin_indices(X, scheme: BinningScheme):
    """Per-dimension bin index of each row of ``X``, shape ``(n, k)``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != len(scheme.bins):
        raise ValueError(f"expected {len(scheme.bins)} feature columns, got {X.shape[1]}")
    lo = np.array([r[0] for r in scheme.ranges])
    hi = np.array([r[1] for r in scheme.ranges])
    n = np.array(scheme.bins)
    idx = np.floor((X - lo) * n / (hi - lo)).astype(np.int64)
    return np.clip(idx, 0, n - 1)


def flat_bin_indices(X, scheme: BinningScheme):
    idx = bin_indices(X, scheme)
    if len(idx) == 0:
        return np.empty(0, dtype=np.int64)
    return np.ravel_multi_index(tuple(idx.T), scheme.bins)


def assign_bin(sample, scheme: BinningScheme):
    """Multidimensional bin index of one sample."""
    x = np.array([[getattr(sample, c) for c in scheme.subset.columns]])
    return tuple(int(i) for i in bin_indices(x, scheme)[0])


def bin_sums(confidence, matched, flat_index, n_total):
    """Per-bin ``(count, sum of confidence, sum of match flags)``.

    Sums from disjoint sample partitions can be added together.
    """
    counts = np.bincount(flat_index, minlength=n_total)
    sum_conf = np.bincount(flat_index, weights=confidence, minlength=n_total)
    sum_match = np.bincount(flat_index, weights=matched, minlength=n_total)
    return counts, sum_conf, sum_match


@dataclass(frozen=True)
class BinStatistics:
    index: tuple
    count: int
    confidence: float
    precision: float
    retained: bool

    @property
    def gap(self):
        return abs(self.precision - self.confidence)


@dataclass
class DEceReport:
    """Result of :func:`compute_d_ece`.

    ``neglected_bin_count`` counts occupied bins below the minimum count,
    ``unretained_bin_count`` counts every bin that does not contribute (empty
    or neglected), so ``unretained_bin_count == n_bins_total - retained_bin_count``.
    """

    d_ece: float
    retained_sample_count: int
    total_sample_count: int
    neglected_bin_count: int
    retained_bin_count: int
    empty_bin_count: int
    n_bins_total: int
    min_bin_count: int
    weighting: str = "retained"
    bins: list = field(default_factory=list, repr=False)

    @property
    def unretained_bin_count(self):
        return self.neglected_bin_count + self.empty_bin_count

    def recompute(self):
        """D-ECE from the stored per-bin statistics."""
        kept = [b for b in self.bins if b.retained]
        denom = self.retained_sample_count if self.weighting == "retained" else self.total_sample_count
        return float(sum(b.count / denom * b.gap for b in kept))

    def to_dict(self, include_bins=True):
        doc = {
            "d_ece": self.d_ece,
            "retained_sample_count": self.retained_sample_count,
            "total_sample_count": self.total_sample_count,
            "neglected_bin_count": self.neglected_bin_count,
            "unretained_bin_count": self.unretained_bin_count,
            "retained_bin_count": self.retained_bin_count,
            "empty_bin_count": self.empty_bin_count,
            "n_bins_total": self.n_bins_total,
            "min_bin_count": self.min_bin_count,
            "weighting": self.weighting,
        }
        if include_bins:
            doc["bins"] = [
                {"index": list(b.index), "count": b.count, "confidence": b.confidence,
                 "precision": b.precision, "retained": b.retained}
                for b in self.bins
            ]
        return doc


def _d_ece_arrays(X, matched, scheme, min_bin_count, weighting, keep_bins=True):
    if weighting not in ("retained", "total"):
        raise ValueError(f"weighting must be 'retained' or 'total', got {weighting!r}")
    if min_bin_count < 1:
        raise ValueError("min_bin_count must be at least 1")
    matched = np.asarray(matched, dtype=float)
    X = np.asarray(X, dtype=float).reshape(len(matched), len(scheme.bins))
    n_total = scheme.n_total
    flat = flat_bin_indices(X, scheme) if len(X) else np.empty(0, dtype=np.int64)
    counts, sum_conf, sum_match = bin_sums(X[:, 0], matched, flat, n_total)
    occupied = counts > 0
    retained = counts >= min_bin_count
    n_retained = int(counts[retained].sum())
    if n_retained == 0:
        raise NoRetainedSamplesError(
            f"no retained samples: all {int(occupied.sum())} occupied bins hold fewer than "
            f"{min_bin_count} of {len(X)} samples"
        )
    kept = np.flatnonzero(retained)
    conf = sum_conf[kept] / counts[kept]
    prec = sum_match[kept] / counts[kept]
    denom = n_retained if weighting == "retained" else len(X)
    d_ece = float(np.sum(counts[kept] / denom * np.abs(prec - conf)))

    bins = []
    if keep_bins:
        occ = np.flatnonzero(occupied)
        multi = np.unravel_index(occ, scheme.bins)
        for j, b in enumerate(occ):
            bins.append(BinStatistics(
                index=tuple(int(m[j]) for m in multi),
                count=int(counts[b]),
                confidence=float(sum_conf[b] / counts[b]),
                precision=float(sum_match[b] / counts[b]),
                retained=bool(retained[b]),
            ))
    return DEceReport(
        d_ece=d_ece,
        retained_sample_count=n_retained,
        total_sample_count=int(len(X)),
        neglected_bin_count=int((occupied & ~retained).sum()),
        retained_bin_count=int(retained.sum()),
        empty_bin_count=int((~occupied).sum()),
        n_bins_total=n_total,
        min_bin_count=int(min_bin_count),
        weighting=weighting,
        bins=bins,
    )


def compute_d_ece(samples, scheme: BinningScheme, min_bin_count=DEFAULT_MIN_BIN_COUNT,
                  weighting="retained", keep_bins=True):
    """Detection expected calibration error of matched samples.

    Parameters
    ----------
    samples : SampleSet or sequence of MatchedSample
    scheme : BinningScheme
        Selects the feature subset and the bin layout.
    min_bin_count : int, default=8
        Bins holding fewer samples are neglected.
    weighting : {"retained", "total"}, default="retained"
        Denominator of the bin weights: retained samples (weights sum to one)
        or all samples.

    Raises
    ------
    NoRetainedSamplesError
        If every bin is neglected (including the empty-input case).
    """
    samples = SampleSet.coerce(samples)
    return _d_ece_arrays(samples.features(scheme.subset), samples.matched, scheme,
                         min_bin_count, weighting, keep_bins)


def detection_calibration_error(y_true, X, *, bins=20, ranges=None, min_bin_count=1,
                                weighting="retained"):
    """Array-level D-ECE in the style of ``sklearn.metrics``.

    ``X`` has the confidence in its first column followed by any box features;
    ``y_true`` holds the 0/1 match flags.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y_true = np.asarray(y_true)
    if len(X) != len(y_true):
        raise ValueError(f"X has {len(X)} rows but y_true has {len(y_true)}")
    subset = {1: FeatureSubset.CONF, 3: FeatureSubset.CONF_CENTER, 5: FeatureSubset.FULL}.get(X.shape[1])
    if subset is None:
        raise ValueError(f"expected 1, 3 or 5 feature columns, got {X.shape[1]}")
    scheme = BinningScheme(subset, bins, ranges)
    return _d_ece_arrays(X, y_true, scheme, min_bin_count, weighting, keep_bins=False).d_ece


@dataclass
class ReliabilityDiagram:
    """Per-confidence-bin statistics; empty bins carry NaN confidence/precision."""

    edges: np.ndarray
    counts: np.ndarray
    confidence: np.ndarray
    precision: np.ndarray

    @property
    def gaps(self):
        return np.abs(self.precision - self.confidence)

    def to_dict(self):
        def clean(a):
            return [None if np.isnan(v) else float(v) for v in a]

        return {
            "edges": [float(e) for e in self.edges],
            "counts": [int(c) for c in self.counts],
            "confidence": clean(self.confidence),
            "precision": clean(self.precision),
        }

    @classmethod
    def from_dict(cls, doc):
        def arr(a):
            return np.array([np.nan if v is None else v for v in a], dtype=float)

        return cls(np.asarray(doc["edges"], dtype=float), np.asarray(doc["counts"], dtype=int),
                   arr(doc["confidence"]), arr(doc["precision"]))


def reliability_data(samples, n_conf_bins=20, conf_range=(0.0, 1.0)):
    """Data behind a confidence histogram and reliability diagram."""
    if n_conf_bins < 1:
        raise ValueError("n_conf_bins must be at least 1")
    samples = SampleSet.coerce(samples)
    scheme = BinningScheme(FeatureSubset.CONF, n_conf_bins, (conf_range,))
    flat = flat_bin_indices(samples.confidence[:, None], scheme) if len(samples) else np.empty(0, dtype=np.int64)
    counts, sum_conf, sum_match = bin_sums(samples.confidence, samples.matched.astype(float), flat, n_conf_bins)
    with np.errstate(invalid="ignore", divide="ignore"):
        conf = np.where(counts > 0, sum_conf / counts, np.nan)
        prec = np.where(counts > 0, sum_match / counts, np.nan)
    return ReliabilityDiagram(scheme.edges()[0], counts, conf, prec)


@dataclass
class PositionHeatmap:
    """Confidence-only D-ECE per cell of a grid over relative box centers.

    ``values[i, j]`` covers row ``i`` of ``cy`` and column ``j`` of ``cx``;
    cells without retained samples are NaN.
    """

    values: np.ndarray
    counts: np.ndarray

    @property
    def grid_n(self):
        return self.values.shape[0]

    def to_dict(self):
        return {
            "grid_n": int(self.grid_n),
            "values": [[None if np.isnan(v) else float(v) for v in row] for row in self.values],
            "counts": self.counts.astype(int).tolist(),
        }

    @classmethod
    def from_dict(cls, doc):
        values = np.array([[np.nan if v is None else v for v in row] for row in doc["values"]], dtype=float)
        return cls(values, np.asarray(doc["counts"], dtype=int))


def position_heatmap(samples, grid_n=8, n_conf_bins=20, min_bin_count=DEFAULT_MIN_BIN_COUNT):
    """Miscalibration as a function of image location."""
    if grid_n < 1:
        raise ValueError("grid_n must be at least 1")
    samples = SampleSet.coerce(samples)
    grid = BinningScheme(FeatureSubset.CONF_CENTER, (1, grid_n, grid_n))
    conf_scheme = BinningScheme(FeatureSubset.CONF, n_conf_bins)
    values = np.full((grid_n, grid_n), np.nan)
    counts = np.zeros((grid_n, grid_n), dtype=int)
    if len(samples) == 0:
        return PositionHeatmap(values, counts)
    cells = bin_indices(samples.features(FeatureSubset.CONF_CENTER), grid)
    # rows follow cy, columns follow cx
    flat = cells[:, 2] * grid_n + cells[:, 1]
    order = np.argsort(flat, kind="stable")
    uniq, starts = np.unique(flat[order], return_index=True)
    bounds = list(starts[1:]) + [len(order)]
    for cell, start, stop in zip(uniq, starts, bounds):
        members = order[start:stop]
        r, c = divmod(int(cell), grid_n)
        counts[r, c] = len(members)
        try:
            values[r, c] = _d_ece_arrays(samples.confidence[members, None], samples.matched[members],
                                         conf_scheme, min_bin_count, "retained", keep_bins=False).d_ece
        except NoRetainedSamplesError:
            pass
    return PositionHeatmap(values, counts)
