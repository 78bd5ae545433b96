"""Sparse deconvolution with one shared peak shape and an L0 penalty.

Model: ``y = G a + noise`` where column ``c`` of ``G`` is the peak shape
shifted to start at sample ``c - (n_g - 1)``; pulses may therefore start
before the first observation.  The L0 count is approximated by adaptive
ridge weights ``1 / (a_j^2 + beta^2)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from .spline_basis import build_basis, design_matrix
from .unimodal import (
    DEFAULT_LAMBDA_GRID,
    NumericalError,
    fit_unimodal,
    ridge_penalty,
)

logger = logging.getLogger(__name__)

DEFAULT_KAPPA = 0.017
ADAPTIVE_BETA = 1e-5
ZERO_THRESHOLD = 1e-4
POSITIVITY_WEIGHT = 1e6
FACT_WAVE = (17.41, 4.745, 31.81)


# ---------------------------------------------------------------------------
# wave model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WaveParams:
    U0: float
    xi1: float
    xi2: float

    def __post_init__(self):
        if not (self.U0 > 0 and self.xi1 > 0 and self.xi2 > 0):
            raise ValueError("wave parameters must all be positive")

    def as_array(self) -> np.ndarray:
        return np.array([self.U0, self.xi1, self.xi2])

    def peak_time(self) -> float:
        """Location of the continuous maximum."""
        return self.xi1 * np.log((self.xi1 + self.xi2) / self.xi1)


def wave_eval(t, p: WaveParams):
    """Single loading curve ``U0 (1 - exp(-t/xi1)) exp(-t/xi2)`` for ``t >= 0``."""
    t = np.asarray(t, dtype=float)
    tt = np.maximum(t, 0.0)
    val = p.U0 * (1.0 - np.exp(-tt / p.xi1)) * np.exp(-tt / p.xi2)
    out = np.where(t >= 0, val, 0.0)
    return out if out.ndim else float(out)


def wave_eval_full(t, gamma: float, n_p: float, t0: float, p: WaveParams):
    """Baseline plus ``n_p`` coincident waves arriving at ``t0``."""
    if n_p < 0:
        raise ValueError("photon count must be nonnegative")
    return gamma + n_p * wave_eval(np.asarray(t, dtype=float) - t0, p)


# ---------------------------------------------------------------------------
# peak shapes and convolution
# ---------------------------------------------------------------------------

@dataclass
class PeakShape:
    """A pointwise, parametric or unimodal-spline peak shape on ``0..n_g-1``.

    ``values`` always holds the raw (unnormalized) samples; the pulse fit
    uses them divided by their maximum.
    """

    kind: str
    values: np.ndarray
    params: WaveParams | None = None
    coef: np.ndarray | None = None
    mode: int | None = None

    @classmethod
    def tabulated(cls, g) -> PeakShape:
        g = np.asarray(g, dtype=float)
        if g.ndim != 1 or g.size == 0 or not np.all(np.isfinite(g)):
            raise ValueError("peak shape must be a finite nonempty vector")
        return cls("pointwise", g)

    @classmethod
    def parametric(cls, params: WaveParams, n_g: int = 151) -> PeakShape:
        return cls("parametric", wave_eval(np.arange(n_g, dtype=float), params), params=params)

    @property
    def n_g(self) -> int:
        return self.values.size

    def normalized(self) -> np.ndarray:
        peak = self.values.max()
        if not peak > 0:
            raise ValueError("peak shape has no positive value")
        return self.values / peak


def build_conv_matrix(g, n: int) -> np.ndarray:
    """``n x (n + n_g - 1)`` matrix whose columns are shifted copies of ``g``."""
    if isinstance(g, PeakShape):
        g = g.values
    g = np.asarray(g, dtype=float)
    n_g = g.size
    if n_g < 1 or n < n_g:
        raise ValueError(f"need 1 <= n_g <= n, got n_g={n_g}, n={n}")
    G = np.zeros((n, n + n_g - 1))
    rows = np.arange(n)
    for j in range(n_g):
        # sample i sees shape value g[j] from the pulse starting at i - j
        G[rows, rows - j + n_g - 1] = g[j]
    return G


def pulse_matrix(a, n: int, n_g: int) -> np.ndarray:
    """``n x n_g`` matrix with ``A @ g == build_conv_matrix(g, n) @ a``."""
    a = np.asarray(a, dtype=float)
    if a.size != n + n_g - 1:
        raise ValueError("pulse vector has the wrong length")
    A = np.zeros((n, n_g))
    rows = np.arange(n)
    for j in range(n_g):
        A[:, j] = a[rows - j + n_g - 1]
    return A


def pulse_onsets(n_g: int, idx) -> np.ndarray:
    """Sample index at which the pulse in column ``idx`` starts."""
    return np.asarray(idx) - (n_g - 1)


# ---------------------------------------------------------------------------
# preprocessing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScaleRecord:
    offset: float
    scale: float

    def forward(self, y):
        return (np.asarray(y, dtype=float) - self.offset) / self.scale

    def back(self, y):
        return np.asarray(y, dtype=float) * self.scale + self.offset


def preprocess_signal(y) -> tuple[np.ndarray, ScaleRecord]:
    """Shift to minimum zero and scale to maximum one."""
    y = np.asarray(y, dtype=float)
    if y.size == 0:
        raise ValueError("empty signal")
    lo, hi = float(y.min()), float(y.max())
    if not hi > lo:
        raise ValueError("constant signal cannot be scaled")
    rec = ScaleRecord(lo, hi - lo)
    return rec.forward(y), rec


# ---------------------------------------------------------------------------
# pulse estimation
# ---------------------------------------------------------------------------

@dataclass
class PulseSolution:
    pulses: np.ndarray
    kappa: float
    fitted: np.ndarray
    iterations: int
    converged: bool

    @property
    def nonzero_count(self) -> int:
        return int(np.count_nonzero(self.pulses))

    @property
    def active(self) -> np.ndarray:
        return np.flatnonzero(self.pulses)


def l0_fit_pulses(G, y, kappa: float = DEFAULT_KAPPA, max_iter: int = 100,
                  tol: float = 1e-6) -> PulseSolution:
    """Adaptive-ridge approximation of ``||y - G a||^2 + kappa * #{a != 0}``.

    ``y`` is divided by its maximum for the iterations and the pulses are
    scaled back afterwards.  Negative pulses get an extra diagonal weight of
    ``POSITIVITY_WEIGHT`` on each pass.
    """
    G = np.asarray(G, dtype=float)
    y = np.asarray(y, dtype=float)
    if G.ndim != 2 or y.shape != (G.shape[0],):
        raise ValueError("convolution matrix does not match the signal length")
    if not kappa > 0:
        raise ValueError("kappa must be positive")
    ymax = float(y.max())
    if not ymax > 0:
        raise ValueError("signal needs a positive maximum")
    ys = y / ymax
    GtG = G.T @ G
    Gty = G.T @ ys
    idx = np.diag_indices_from(GtG)

    def solve(weights):
        M = GtG.copy()
        M[idx] += weights
        try:
            return np.linalg.solve(M, Gty)
        except np.linalg.LinAlgError as exc:
            raise NumericalError("singular normal equations in pulse fit") from exc

    a = solve(np.full(G.shape[1], kappa))
    converged = False
    for it in range(1, max_iter + 1):
        w = kappa / (a * a + ADAPTIVE_BETA ** 2) + POSITIVITY_WEIGHT * (a < 0)
        a_new = solve(w)
        step = np.max(np.abs(a_new - a))
        a = a_new
        if step < tol:
            converged = True
            break
    if not converged:
        logger.warning("pulse iteration hit the cap of %d", max_iter)
    a = np.where(a < ZERO_THRESHOLD, 0.0, a) * ymax
    return PulseSolution(a, float(kappa), G @ a, it, converged)


# ---------------------------------------------------------------------------
# blind estimation
# ---------------------------------------------------------------------------

@dataclass
class BlindResult:
    shape: PeakShape
    solution: PulseSolution
    scale: ScaleRecord
    outer_iterations: int
    converged: bool
    rss_trace: list = field(default_factory=list)
    flags: list = field(default_factory=list)

    @property
    def n_g(self) -> int:
        return self.shape.n_g

    def onsets(self) -> np.ndarray:
        return pulse_onsets(self.n_g, self.solution.active)

    def heights(self) -> np.ndarray:
        """Peak heights in response units (maximum of each scaled shape)."""
        return self.solution.pulses[self.solution.active] * self.scale.scale

    def fitted(self) -> np.ndarray:
        return self.scale.back(self.solution.fitted)

    def components(self) -> np.ndarray:
        """Per-pulse contributions in response units, one column each."""
        n = self.solution.fitted.size
        g = self.shape.normalized() * self.scale.scale
        cols = []
        a = self.solution.pulses
        for c in self.solution.active:
            cols.append(_shifted(g, n, c, a[c]))
        return np.column_stack(cols) if cols else np.zeros((n, 0))

    def canonical_wave(self) -> WaveParams | None:
        """Wave parameters in response units with the tallest pulse as the unit.

        The amplitude and the pulse heights are only identified up to a common
        factor; this fixes it by expressing every pulse relative to the largest.
        """
        if self.shape.params is None or self.solution.nonzero_count == 0:
            return None
        p = self.shape.params
        unit = wave_eval(np.arange(self.n_g, dtype=float), WaveParams(1.0, p.xi1, p.xi2))
        amp = self.heights().max() / unit.max()
        return WaveParams(float(amp), p.xi1, p.xi2)

    def relative_heights(self) -> np.ndarray:
        h = self.heights()
        return h / h.max() if h.size else h


def _shifted(g, n, c, height):
    out = np.zeros(n)
    onset = c - (g.size - 1)
    lo, hi = max(onset, 0), min(onset + g.size, n)
    out[lo:hi] = height * g[lo - onset:hi - onset]
    return out


def _update_pointwise(A, y, shape):
    g, *_ = np.linalg.lstsq(A, y, rcond=None)
    return PeakShape.tabulated(g)


def _update_parametric(A, y, shape):
    p0 = shape.params
    t = np.arange(shape.n_g, dtype=float)
    # the pulses were fitted against the max-normalized shape
    start = np.log([1.0 / shape.values.max() * p0.U0, p0.xi1, p0.xi2])

    def resid(theta):
        U0, xi1, xi2 = np.exp(theta)
        return A @ wave_eval(t, WaveParams(U0, xi1, xi2)) - y

    sol = least_squares(resid, start, method="trf", x_scale=1.0, xtol=1e-10, ftol=1e-12)
    U0, xi1, xi2 = np.exp(sol.x)
    return PeakShape.parametric(WaveParams(U0, xi1, xi2), shape.n_g)


def _update_unimodal(A, y, shape, q=None, k=3, penalty=None):
    n_g = shape.n_g
    q = max(min(n_g // 4, 40), 1) if q is None else q
    basis = build_basis(0.0, n_g - 1.0, q, k)
    Bg = design_matrix(basis, np.arange(n_g, dtype=float))
    X = A @ Bg
    pen = penalty or ridge_penalty(basis.dim)
    resid = y - A @ shape.normalized()
    sigma2 = max(float(resid @ resid) / max(y.size - 1, 1), 1e-10)
    fit = fit_unimodal(X, y, pen, sigma2, lam_grid=DEFAULT_LAMBDA_GRID)
    values = Bg @ fit.coef
    return PeakShape("unimodal", values, coef=fit.coef, mode=fit.mode)


_UPDATES = {
    "pointwise": _update_pointwise,
    "parametric": _update_parametric,
    "unimodal": _update_unimodal,
}


def blind_deconv(y, initial: PeakShape, kappa: float = DEFAULT_KAPPA, variant: str | None = None,
                 max_outer: int = 50, rtol: float = 1e-5,
                 preprocess: bool = True) -> BlindResult:
    """Alternate pulse estimation and peak-shape updates.

    ``variant`` is ``"pointwise"``, ``"parametric"`` or ``"unimodal"`` and
    defaults to the kind of ``initial``.  Stops when the relative change of
    the residual sum of squares drops below ``rtol``.
    """
    variant = variant or initial.kind
    if variant not in _UPDATES:
        raise ValueError(f"unknown blind variant {variant!r}")
    if variant == "parametric" and initial.params is None:
        raise ValueError("parametric variant needs wave parameters")
    y = np.asarray(y, dtype=float)
    if preprocess:
        ys, rec = preprocess_signal(y)
    else:
        ys, rec = y, ScaleRecord(0.0, 1.0)
    n = ys.size
    shape = initial
    flags = []
    trace = []
    converged = False
    sol = None
    for outer in range(1, max_outer + 1):
        G = build_conv_matrix(shape.normalized(), n)
        sol = l0_fit_pulses(G, ys, kappa)
        rss = float(np.sum((ys - sol.fitted) ** 2))
        trace.append(rss)
        if sol.nonzero_count == 0:
            flags.append("all pulses zero; shape update skipped")
            break
        if len(trace) > 1 and abs(trace[-2] - rss) <= rtol * max(trace[-2], 1e-300):
            converged = True
            break
        if outer == max_outer:
            flags.append(f"outer iteration cap {max_outer} reached")
            break
        A = pulse_matrix(sol.pulses, n, shape.n_g)
        try:
            new = _UPDATES[variant](A, ys, shape)
            new.normalized()
        except (ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
            flags.append(f"shape update failed: {exc}")
            break
        shape = new
    return BlindResult(shape, sol, rec, outer, converged, trace, flags)
