import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from peakforge.piecewise import (
    Segment,
    classify_phases,
    fit_piecewise,
    piecewise_fitted,
    segment_by_threshold,
    turning_point,
)
from peakforge.spline_basis import build_basis, derivative, design_matrix
from peakforge.synthetic import dive_profile
from peakforge.unimodal import difference_penalty, fit_unimodal, make_penalty


def test_two_runs_with_padding():
    y = np.array([0, 0, 5, 6, 5, 0, 0, 4, 7, 0], float)
    segs = segment_by_threshold(np.arange(10.0), y, 3)
    assert [(s.start, s.stop) for s in segs] == [(1, 6), (6, 10)]


def test_nothing_above_threshold():
    assert segment_by_threshold(np.arange(5.0), np.zeros(5), 1.0) == []


def test_bad_input():
    with pytest.raises(ValueError):
        segment_by_threshold([], [], 1.0)
    with pytest.raises(ValueError):
        segment_by_threshold([0, 2, 1], [5, 5, 5], 1.0)


def test_min_size_drops_short_runs():
    y = np.array([0, 5, 0, 0, 5, 5, 5, 5, 0], float)
    segs = segment_by_threshold(np.arange(9.0), y, 3, min_size=4)
    assert [(s.start, s.stop) for s in segs] == [(3, 9)]


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=1, max_size=60), st.floats(-5, 5))
def test_segments_partition_the_exceedances(values, thr):
    y = np.array(values)
    segs = segment_by_threshold(np.arange(y.size, dtype=float), y, thr)
    covered = np.zeros(y.size, int)
    for s in segs:
        covered[s.start:s.stop] += 1
    assert covered.max(initial=0) <= 1
    assert np.all(covered[y >= thr] == 1)
    stops = [s.stop for s in segs]
    starts = [s.start for s in segs]
    assert starts == sorted(starts) and all(a <= b for a, b in zip(stops, starts[1:]))


def test_dive_profile_segments():
    for seed in range(5):
        syn = dive_profile(n_dives=5, seed=seed)
        segs = segment_by_threshold(syn.record.x, syn.record.y, 3.0)
        assert len(segs) == 5


def test_single_segment_reduces_to_plain_fit():
    x = np.linspace(0, 1, 80)
    y = np.sin(np.pi * x) ** 3
    seg = Segment(0, 80, 0.0, 1.0)
    [out] = fit_piecewise(x, y, [seg], q=10, sigma2=0.01)
    basis = build_basis(0, 1, 10, 3)
    plain = fit_unimodal(design_matrix(basis, x), y, difference_penalty(14), 0.01)
    np.testing.assert_array_equal(out.fit.coef, plain.coef)
    assert out.fit.mode == plain.mode
    np.testing.assert_array_equal(piecewise_fitted(80, [out]), plain.fitted)


def test_failures_are_per_segment():
    x = np.arange(100.0)
    y = np.zeros(100)
    y[5:10] = 5
    y[30:90] = 10 * np.sin(np.linspace(0, np.pi, 60))
    segs = fit_piecewise(x, y, segment_by_threshold(x, y, 1.0), q=25)
    assert segs[0].fit is None and "observations" in segs[0].error
    assert segs[1].fit is not None and segs[1].error is None
    f = piecewise_fitted(100, segs)
    assert np.isnan(f[6]) and np.isfinite(f[50])


def test_symmetric_peak_turning_point():
    rng = np.random.default_rng(4)
    x = np.linspace(0, 1, 101)
    y = np.exp(-((x - 0.5) / 0.15) ** 2) + 0.02 * rng.normal(size=101)
    [seg] = fit_piecewise(x, y, [Segment(0, 101, 0.0, 1.0)], q=25, sigma2=0.02 ** 2)
    labels = classify_phases(x, seg)
    assert abs(labels.turning_point - 0.5) < 0.05
    assert len(labels.descent) + len(labels.ascent) == 101


def test_monotone_segment_has_no_ascent():
    x = np.linspace(0, 1, 60)
    [seg] = fit_piecewise(x, 2 * x + x ** 2, [Segment(0, 60, 0.0, 1.0)], q=8, sigma2=1.0)
    labels = classify_phases(x, seg)
    assert labels.turning_point == pytest.approx(1.0)
    assert len(labels.ascent) == 0 and labels.descent == range(0, 60)


def test_flat_fit_has_no_phases():
    x = np.linspace(0, 1, 40)
    [seg] = fit_piecewise(x, np.full(40, 3.0), [Segment(0, 40, 0.0, 1.0)], q=5, sigma2=1.0)
    assert turning_point(seg.fit) is None
    assert not classify_phases(x, seg).has_phases


def test_single_crossing_for_every_lambda():
    t = np.linspace(0, 1, 70)
    depth = 30 * t * (1 - t) * 4
    x = 5.0 * np.arange(70)
    for lam in np.logspace(-4, 5, 10):
        [seg] = fit_piecewise(x, depth, [Segment(0, 70, x[0], x[-1])], q=25, sigma2=1.0, lam=lam)
        ds = derivative(seg.fit.spline)
        inner = ds.coef[1:-1]
        m = seg.fit.mode
        assert np.all(inner[: m - 1] >= -1e-9) and np.all(inner[m - 1:] <= 1e-9)
        vals = ds(np.linspace(x[0], x[-1], 5000))
        signs = np.sign(vals[np.abs(vals) > 1e-9])
        assert np.count_nonzero(np.diff(signs)) <= 1
        assert abs(turning_point(seg.fit) - x[-1] / 2) < 0.05 * x[-1]
