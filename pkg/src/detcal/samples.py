"""Matched detection samples and the feature subsets drawn from them."""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Hashable

import numpy as np


class FeatureSubset(str, enum.Enum):
    """Which detection features enter binning, always led by confidence."""

    CONF = "conf"
    CONF_CENTER = "conf_center"
    CONF_SCALE = "conf_scale"
    FULL = "full"

    @property
    def columns(self):
        return _COLUMNS[self]

    @property
    def ndim(self):
        return len(_COLUMNS[self])

    @property
    def label(self):
        return _LABELS[self]

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(value)
        except ValueError:
            raise ValueError(
                f"unknown feature subset {value!r}; expected one of {[s.value for s in cls]}"
            ) from None


_COLUMNS = {
    FeatureSubset.CONF: ("confidence",),
    FeatureSubset.CONF_CENTER: ("confidence", "cx", "cy"),
    FeatureSubset.CONF_SCALE: ("confidence", "h", "w"),
    FeatureSubset.FULL: ("confidence", "cx", "cy", "h", "w"),
}
_LABELS = {
    FeatureSubset.CONF: "(p)",
    FeatureSubset.CONF_CENTER: "(p,cx,cy)",
    FeatureSubset.CONF_SCALE: "(p,h,w)",
    FeatureSubset.FULL: "full",
}


@dataclass(frozen=True)
class MatchedSample:
    """One detection's relative features together with its match flag."""

    confidence: float
    cx: float
    cy: float
    w: float
    h: float
    matched: int
    image_id: Hashable = None

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must lie in [0, 1], got {self.confidence}")
        if self.matched not in (0, 1):
            raise ValueError(f"match flag must be 0 or 1, got {self.matched!r}")


_FIELDS = ("confidence", "cx", "cy", "w", "h")


class SampleSet:
    """Column store of matched samples.

    Indexing with an integer returns a :class:`MatchedSample`; indexing with
    a slice, boolean mask or index array returns a new ``SampleSet``.
    """

    def __init__(self, confidence, cx, cy, w, h, matched, image_id=None):
        self.confidence = np.asarray(confidence, dtype=float).reshape(-1)
        n = len(self.confidence)
        self.cx = np.asarray(cx, dtype=float).reshape(-1)
        self.cy = np.asarray(cy, dtype=float).reshape(-1)
        self.w = np.asarray(w, dtype=float).reshape(-1)
        self.h = np.asarray(h, dtype=float).reshape(-1)
        self.matched = np.asarray(matched).astype(np.int8).reshape(-1)
        if image_id is None:
            image_id = np.full(n, None, dtype=object)
        ids = np.empty(n, dtype=object)
        ids[:] = list(image_id)
        self.image_id = ids
        for name in _FIELDS + ("matched", "image_id"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"column {name!r} has length {len(getattr(self, name))}, expected {n}")
        if n and (self.confidence.min() < 0 or self.confidence.max() > 1):
            raise ValueError("confidences must lie in [0, 1]")
        if n and not np.isin(self.matched, (0, 1)).all():
            raise ValueError("match flags must be 0 or 1")

    @classmethod
    def empty(cls):
        return cls([], [], [], [], [], [])

    @classmethod
    def from_records(cls, records):
        records = list(records)
        cols = {name: [getattr(r, name) for r in records] for name in _FIELDS + ("matched", "image_id")}
        return cls(**cols)

    @classmethod
    def coerce(cls, samples):
        return samples if isinstance(samples, cls) else cls.from_records(samples)

    @classmethod
    def concatenate(cls, parts):
        parts = list(parts)
        if not parts:
            return cls.empty()
        return cls(**{
            name: np.concatenate([getattr(p, name) for p in parts])
            for name in _FIELDS + ("matched", "image_id")
        })

    def __len__(self):
        return len(self.confidence)

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def __getitem__(self, idx):
        if isinstance(idx, (int, np.integer)):
            return MatchedSample(
                float(self.confidence[idx]), float(self.cx[idx]), float(self.cy[idx]),
                float(self.w[idx]), float(self.h[idx]), int(self.matched[idx]), self.image_id[idx],
            )
        return SampleSet(**{name: getattr(self, name)[idx] for name in _FIELDS + ("matched", "image_id")})

    def __eq__(self, other):
        if not isinstance(other, SampleSet):
            return NotImplemented
        if len(self) != len(other):
            return False
        return all(
            np.array_equal(getattr(self, n), getattr(other, n)) for n in _FIELDS + ("matched",)
        ) and list(self.image_id) == list(other.image_id)

    def __repr__(self):
        return f"SampleSet(n={len(self)}, positives={int(self.matched.sum())})"

    def features(self, subset=FeatureSubset.FULL):
        """Feature matrix of shape ``(n, k)`` for the chosen subset."""
        subset = FeatureSubset.parse(subset)
        return np.column_stack([getattr(self, c) for c in subset.columns])

    def with_confidence(self, confidence):
        """Copy with confidences replaced; geometry and match flags untouched."""
        return SampleSet(confidence, self.cx, self.cy, self.w, self.h, self.matched, self.image_id)

    @property
    def precision(self):
        return float(self.matched.mean()) if len(self) else float("nan")
