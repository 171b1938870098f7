import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from detcal.metrics import (
    BinningScheme,
    NoRetainedSamplesError,
    PositionHeatmap,
    ReliabilityDiagram,
    assign_bin,
    bin_indices,
    bin_sums,
    compute_d_ece,
    detection_calibration_error,
    flat_bin_indices,
    position_heatmap,
    reliability_data,
)
from detcal.samples import FeatureSubset, MatchedSample, SampleSet

from oracles import classical_ece, naive_d_ece


def samples_from(conf, matched, cx=0.5, cy=0.5, w=0.1, h=0.1, image_id=1):
    n = len(conf)
    full = lambda v: np.broadcast_to(np.asarray(v, dtype=float), (n,))
    return SampleSet(confidence=conf, cx=full(cx), cy=full(cy), w=full(w), h=full(h),
                     matched=matched, image_id=np.full(n, image_id))


def random_samples(rng, n):
    return SampleSet(confidence=rng.random(n), cx=rng.random(n), cy=rng.random(n),
                     w=rng.uniform(0.01, 1, n), h=rng.uniform(0.01, 1, n),
                     matched=(rng.random(n) < 0.5).astype(int), image_id=rng.integers(0, 50, n))


def one(conf):
    return MatchedSample(conf, 0.5, 0.5, 0.1, 0.1, 1, 1)


@pytest.mark.parametrize("conf, expected", [(0.0, 0), (1.0, 19), (0.37, 7), (0.05, 1), (0.999999, 19)])
def test_assign_bin_confidence(conf, expected):
    assert assign_bin(one(conf), BinningScheme("conf", 20)) == (expected,)


def test_assign_bin_decimal_edges_follow_formula():
    # 0.3 * 20 rounds to 6.000000000000001 in floating point
    scheme = BinningScheme("conf", 20)
    assert [assign_bin(one(k / 20), scheme)[0] for k in range(21)] == list(range(20)) + [19]


def test_assign_bin_multidimensional():
    s = MatchedSample(0.5, 0.0, 1.0, 0.3, 0.6, 1, 1)
    assert assign_bin(s, BinningScheme("full", 5)) == (2, 0, 4, 3, 1)
    assert assign_bin(s, BinningScheme("conf_scale", 5)) == (2, 3, 1)


def test_assign_bin_custom_range():
    scheme = BinningScheme("conf", 7, ((0.3, 1.0),))
    assert assign_bin(one(0.3), scheme) == (0,)
    assert assign_bin(one(1.0), scheme) == (6,)
    assert assign_bin(one(0.1), scheme) == (0,)


def test_default_bin_counts():
    assert BinningScheme.for_evaluation("conf").bins == (20,)
    assert BinningScheme.for_evaluation("conf_center").bins == (8, 8, 8)
    assert BinningScheme.for_evaluation("conf_scale").bins == (8, 8, 8)
    assert BinningScheme.for_evaluation("full").bins == (5,) * 5
    assert BinningScheme.for_calibration("conf").bins == (15,)
    assert BinningScheme.for_calibration("conf_center").bins == (5, 5, 5)
    assert BinningScheme.for_calibration("full").bins == (3,) * 5
    assert BinningScheme.for_evaluation("full").n_total == 3125


def test_scheme_validation_and_round_trip():
    with pytest.raises(ValueError):
        BinningScheme("conf", 0)
    with pytest.raises(ValueError):
        BinningScheme("conf_center", (8, 8))
    with pytest.raises(ValueError):
        BinningScheme("conf", 4, ((1.0, 0.0),))
    s = BinningScheme("conf_scale", (4, 5, 6))
    assert BinningScheme.from_dict(json.loads(json.dumps(s.to_dict()))) == s


def test_two_bin_example():
    s = samples_from([0.4, 0.4, 0.9, 0.9], [0, 1, 1, 1])
    report = compute_d_ece(s, BinningScheme("conf", 2), min_bin_count=1)
    assert report.d_ece == pytest.approx(0.1, abs=1e-12)
    assert report.retained_bin_count == 2 and report.neglected_bin_count == 0


def test_single_bin_is_global_gap(rng):
    s = random_samples(rng, 500)
    report = compute_d_ece(s, BinningScheme("conf", 1), min_bin_count=1)
    assert report.d_ece == pytest.approx(abs(s.matched.mean() - s.confidence.mean()), abs=1e-12)


@pytest.mark.parametrize("n, retained", [(7, False), (8, True)])
def test_min_bin_count_boundary(n, retained):
    conf = [0.55] * n + [0.05] * 10
    m = [1] * n + [0] * 10
    report = compute_d_ece(samples_from(conf, m), BinningScheme("conf", 20), min_bin_count=8)
    assert report.neglected_bin_count == (0 if retained else 1)
    assert report.retained_sample_count == 10 + (n if retained else 0)
    assert report.d_ece == pytest.approx(0.05 if not retained else (10 * 0.05 + n * 0.45) / (10 + n))


def test_all_bins_neglected_raises():
    with pytest.raises(NoRetainedSamplesError):
        compute_d_ece(samples_from([0.5] * 3, [1, 0, 1]), BinningScheme("conf", 20))
    with pytest.raises(NoRetainedSamplesError):
        compute_d_ece(SampleSet.empty(), BinningScheme("conf", 20))


def test_weighting_total(rng):
    s = random_samples(rng, 300)
    scheme = BinningScheme("conf_center", 4)
    a = compute_d_ece(s, scheme, min_bin_count=8, weighting="total")
    b = compute_d_ece(s, scheme, min_bin_count=8, weighting="retained")
    assert a.d_ece == pytest.approx(b.d_ece * b.retained_sample_count / len(s))
    with pytest.raises(ValueError):
        compute_d_ece(s, scheme, weighting="mean")


@pytest.mark.parametrize("subset, bins", [("conf", (20,)), ("conf_center", (8, 8, 8)),
                                          ("conf_scale", (3, 4, 5)), ("full", (5,) * 5)])
@pytest.mark.parametrize("min_count", [1, 8])
@pytest.mark.parametrize("weighting", ["retained", "total"])
def test_matches_naive_oracle(rng, subset, bins, min_count, weighting):
    for n in (50, 1000, 5000):
        s = random_samples(rng, n)
        # concentrate some mass so bins reach the minimum count, away from bin edges
        s.confidence[: n // 2] = np.floor(s.confidence[: n // 2] * 10) / 10 + 0.0123
        scheme = BinningScheme(subset, bins)
        X = s.features(subset)
        try:
            report = compute_d_ece(s, scheme, min_bin_count=min_count, weighting=weighting)
        except NoRetainedSamplesError:
            assert naive_d_ece(X, s.matched, bins, None, min_count, weighting)[3] == 0
            continue
        value, neglected, empty, retained = naive_d_ece(X, s.matched, bins, None, min_count, weighting)
        assert report.d_ece == pytest.approx(value, abs=1e-12)
        assert report.neglected_bin_count == neglected
        assert report.empty_bin_count == empty
        assert report.retained_sample_count == retained


def test_reduces_to_classical_ece(rng):
    for n_bins in (1, 5, 10, 20):
        conf = rng.random(2000)
        m = (rng.random(2000) < conf ** 2).astype(int)
        value = compute_d_ece(samples_from(conf, m), BinningScheme("conf", n_bins), min_bin_count=1).d_ece
        assert value == pytest.approx(classical_ece(conf, m, n_bins), abs=1e-12)
        assert detection_calibration_error(m, conf, bins=n_bins) == pytest.approx(value, abs=1e-15)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 100_000), st.integers(1, 400), st.sampled_from(["conf", "conf_center", "full"]))
def test_permutation_invariance_and_accounting(seed, n, subset):
    rng = np.random.default_rng(seed)
    s = random_samples(rng, n)
    scheme = BinningScheme.for_evaluation(subset)
    try:
        report = compute_d_ece(s, scheme, min_bin_count=2)
    except NoRetainedSamplesError:
        return
    shuffled = s[rng.permutation(n)]
    other = compute_d_ece(shuffled, scheme, min_bin_count=2)
    a, b = report.to_dict(), other.to_dict()
    assert a.pop("d_ece") == pytest.approx(b.pop("d_ece"), abs=1e-15)
    for bin_a, bin_b in zip(a.pop("bins"), b.pop("bins")):
        assert bin_a["index"] == bin_b["index"] and bin_a["count"] == bin_b["count"]
        assert bin_a["confidence"] == pytest.approx(bin_b["confidence"], abs=1e-15)
    assert a == b
    assert report.neglected_bin_count + report.retained_bin_count + report.empty_bin_count == scheme.n_total
    assert report.unretained_bin_count == scheme.n_total - report.retained_bin_count
    assert 0.0 <= report.d_ece <= 1.0
    assert report.recompute() == pytest.approx(report.d_ece, abs=1e-12)
    assert sum(b.count for b in report.bins) == n


def test_zero_iff_calibrated_bins():
    # per-bin mean confidence equals per-bin precision
    conf = [0.25] * 8 + [0.75] * 8
    m = [1, 1, 0, 0, 0, 0, 0, 0] + [1, 1, 1, 1, 1, 1, 0, 0]
    assert compute_d_ece(samples_from(conf, m), BinningScheme("conf", 20)).d_ece == 0.0
    m[0] = 0
    assert compute_d_ece(samples_from(conf, m), BinningScheme("conf", 20)).d_ece > 0


def test_bin_sums_merge(rng):
    s = random_samples(rng, 1000)
    scheme = BinningScheme("conf_center", 4)
    flat = flat_bin_indices(s.features("conf_center"), scheme)
    whole = bin_sums(s.confidence, s.matched, flat, scheme.n_total)
    parts = [bin_sums(s.confidence[sl], s.matched[sl], flat[sl], scheme.n_total)
             for sl in (slice(0, 300), slice(300, 1000))]
    for w, a, b in zip(whole, *parts):
        np.testing.assert_allclose(w, a + b)


def test_bin_indices_shape_check():
    with pytest.raises(ValueError):
        bin_indices(np.zeros((3, 2)), BinningScheme("conf", 4))


def test_reliability_calibrated():
    conf = np.repeat([0.125, 0.375, 0.625, 0.875], 8)
    m = np.concatenate([[1] + [0] * 7, [1] * 3 + [0] * 5, [1] * 5 + [0] * 3, [1] * 7 + [0]])
    r = reliability_data(samples_from(conf, m), n_conf_bins=4)
    np.testing.assert_allclose(r.gaps, 0.0, atol=1e-15)
    assert r.counts.tolist() == [8, 8, 8, 8]


def test_reliability_degenerate_and_empty():
    r = reliability_data(samples_from([0.5] * 5, [1] * 5), n_conf_bins=20)
    occupied = np.flatnonzero(r.counts)
    assert occupied.tolist() == [10]
    assert r.precision[10] == 1.0 and r.confidence[10] == 0.5
    assert np.isnan(r.confidence[0]) and np.isnan(r.gaps[0]) and r.counts[0] == 0
    assert len(r.edges) == 21
    doc = json.loads(json.dumps(r.to_dict()))
    assert doc["confidence"][0] is None
    back = ReliabilityDiagram.from_dict(doc)
    np.testing.assert_array_equal(back.counts, r.counts)
    assert np.isnan(back.precision[0]) and back.precision[10] == 1.0
    with pytest.raises(ValueError):
        reliability_data(SampleSet.empty(), n_conf_bins=0)


def test_heatmap_calibrated_cells_are_zero():
    conf, m, cx, cy = [], [], [], []
    for i in range(4):
        for j in range(4):
            conf += [0.25] * 8
            m += [1, 1, 0, 0, 0, 0, 0, 0]
            cx += [(j + 0.5) / 4] * 8
            cy += [(i + 0.5) / 4] * 8
    s = samples_from(conf, m, cx=cx, cy=cy)
    hm = position_heatmap(s, grid_n=4)
    np.testing.assert_array_equal(hm.values, np.zeros((4, 4)))
    assert hm.counts.sum() == len(s)


def test_heatmap_single_cell(rng):
    n = 400
    s = samples_from(rng.random(n), (rng.random(n) < 0.5).astype(int), cx=0.1, cy=0.8)
    hm = position_heatmap(s, grid_n=8)
    expected = compute_d_ece(s, BinningScheme("conf", 20)).d_ece
    # row follows cy, column follows cx
    assert hm.values[6, 0] == pytest.approx(expected, abs=1e-15)
    assert np.isnan(hm.values).sum() == 63
    assert hm.counts[6, 0] == n


def test_heatmap_grid_one_is_global(rng):
    s = random_samples(rng, 1000)
    hm = position_heatmap(s, grid_n=1)
    assert hm.values[0, 0] == pytest.approx(compute_d_ece(s, BinningScheme("conf", 20)).d_ece, abs=1e-15)


def test_heatmap_sparse_cells_empty_and_round_trip():
    s = samples_from([0.5] * 3, [1, 0, 1])
    hm = position_heatmap(s, grid_n=2)
    assert np.isnan(hm.values).all() and hm.counts[1, 1] == 3
    back = PositionHeatmap.from_dict(json.loads(json.dumps(hm.to_dict())))
    assert np.isnan(back.values).all()
    np.testing.assert_array_equal(back.counts, hm.counts)
    empty = position_heatmap(SampleSet.empty(), grid_n=3)
    assert empty.values.shape == (3, 3) and np.isnan(empty.values).all()
