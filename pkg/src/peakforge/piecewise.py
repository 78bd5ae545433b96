"""Piecewise unimodal regression: threshold segmentation plus one fit per piece."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .spline_basis import build_basis, derivative, design_matrix
from .unimodal import (
    DEFAULT_LAMBDA_GRID,
    UnimodalFit,
    fit_unimodal,
    fit_with_sigma_iteration,
    make_penalty,
)

logger = logging.getLogger(__name__)


@dataclass
class Segment:
    start: int  # first observation index (0-based, inclusive)
    stop: int  # one past the last observation index
    x_lo: float
    x_hi: float
    fit: UnimodalFit | None = None
    error: str | None = None

    @property
    def indices(self) -> range:
        return range(self.start, self.stop)

    def __len__(self):
        return self.stop - self.start


@dataclass
class PhaseLabels:
    turning_point: float | None
    descent: range
    ascent: range

    @property
    def has_phases(self) -> bool:
        return self.turning_point is not None


def _check_xy(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size == 0:
        raise ValueError("empty input")
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-d with equal length")
    if np.any(np.diff(x) <= 0):
        raise ValueError("x must be strictly increasing")
    return x, y


def segment_by_threshold(x, y, threshold: float, min_size: int = 1) -> list[Segment]:
    """Maximal runs with ``y >= threshold``, padded by one point on each side.

    The padding point is only taken when it is below threshold and not
    already part of the previous segment.  Segments with fewer than
    ``min_size`` observations are dropped.
    """
    x, y = _check_xy(x, y)
    above = y >= threshold
    if not above.any():
        return []
    edges = np.diff(np.concatenate([[0], above.astype(np.int8), [0]]))
    starts = np.flatnonzero(edges == 1)
    stops = np.flatnonzero(edges == -1)
    segments = []
    last_stop = 0
    for lo, hi in zip(starts, stops):
        lo = lo - 1 if lo > last_stop else lo
        hi = hi + 1 if hi < y.size else hi
        last_stop = hi
        if hi - lo < min_size:
            logger.warning("dropping segment %d:%d shorter than %d points", lo, hi, min_size)
            continue
        segments.append(Segment(int(lo), int(hi), float(x[lo]), float(x[hi - 1])))
    return segments


def fit_piecewise(x, y, segments: list[Segment], q: int = 25, k: int = 3,
                  penalty: str = "second_order_difference", sigma2: float | None = None,
                  sigma2_init: float = 2.0, abstol: float = 0.01,
                  lam: float | None = None, lam_grid=DEFAULT_LAMBDA_GRID) -> list[Segment]:
    """Fit an independent unimodal spline on each segment's own interval.

    With ``sigma2=None`` the variance is iterated per piece from
    ``sigma2_init``; otherwise it is held fixed.  A failing piece keeps its
    error message and does not stop the others.
    """
    x, y = _check_xy(x, y)
    d = q + k + 1
    out = []
    for seg in segments:
        seg = Segment(seg.start, seg.stop, seg.x_lo, seg.x_hi)
        xs, ys = x[seg.start:seg.stop], y[seg.start:seg.stop]
        if len(seg) < d:
            seg.error = f"segment has {len(seg)} observations, basis needs {d}"
            logger.warning(seg.error)
            out.append(seg)
            continue
        try:
            basis = build_basis(xs[0], xs[-1], q, k)
            B = design_matrix(basis, xs)
            pen = make_penalty(penalty, d)
            if sigma2 is None:
                seg.fit = fit_with_sigma_iteration(B, ys, pen, sigma2_init, abstol, lam=lam,
                                                   lam_grid=lam_grid, basis=basis, strict=False)
            else:
                seg.fit = fit_unimodal(B, ys, pen, sigma2, lam=lam, lam_grid=lam_grid,
                                       basis=basis)
        except (ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
            seg.error = str(exc)
            logger.warning("segment %d:%d failed: %s", seg.start, seg.stop, exc)
        out.append(seg)
    return out


def piecewise_fitted(n: int, segments: list[Segment]) -> np.ndarray:
    """Global fitted values; observations outside every fitted piece get NaN."""
    f = np.full(n, np.nan)
    for seg in segments:
        if seg.fit is not None:
            f[seg.start:seg.stop] = seg.fit.fitted
    return f


def _bisect(f, lo, hi, tol):
    # f(lo) is True, f(hi) is False
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if f(mid):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def turning_point(fit: UnimodalFit, tol: float = 1e-8, grid: int = 1025) -> float | None:
    """Zero crossing of the fitted derivative, located by bisection.

    Returns ``None`` for a flat fit.  A derivative that never turns negative
    puts the turning point at the right end; one that is never positive puts
    it at the left end.  If the derivative is exactly zero over a stretch
    (a flat top), the middle of that stretch is returned.
    """
    ds = derivative(fit.spline)
    a, b = fit.basis.a, fit.basis.b
    xs = np.linspace(a, b, grid)
    v = ds(xs)
    eps = 1e-10 * max(np.abs(fit.coef).max(), 1e-300) / (b - a)
    pos = np.flatnonzero(v > eps)
    neg = np.flatnonzero(v < -eps)
    if pos.size == 0 and neg.size == 0:
        return None
    if neg.size == 0:
        return b
    if pos.size == 0:
        return a
    i = pos[-1]
    after = neg[neg > i]
    if after.size == 0:
        return b
    j = after[0]
    end_up = _bisect(lambda t: ds(t) > eps, xs[i], xs[i + 1], tol)
    start_down = _bisect(lambda t: not ds(t) < -eps, xs[j - 1], xs[j], tol)
    return 0.5 * (end_up + start_down)


def classify_phases(x, segment: Segment) -> PhaseLabels:
    """Split a fitted piece into the part before and after its turning point.

    With depth stored positive-down the part before the turning point is the
    descent.
    """
    if segment.fit is None:
        raise ValueError("segment has no fit")
    x = np.asarray(x, dtype=float)
    tp = turning_point(segment.fit)
    if tp is None:
        return PhaseLabels(None, range(segment.start, segment.start),
                           range(segment.stop, segment.stop))
    xs = x[segment.start:segment.stop]
    split = segment.start + int(np.searchsorted(xs, tp, side="right"))
    if tp >= segment.fit.basis.b:
        split = segment.stop
    return PhaseLabels(float(tp), range(segment.start, split), range(split, segment.stop))
