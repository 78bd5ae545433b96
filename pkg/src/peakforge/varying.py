"""L0 deconvolution with diverse unimodal peak shapes.

Every column ``j`` of the shape matrix is a spline fitted with its mode
fixed at coefficient ``j`` and mapped to ``[0, 1]``; sparse input pulses pick
the few columns that make up the signal.  Pulses and columns are updated
alternately, with pulses estimated by adaptive ridge.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .spline_basis import BSplineBasis, build_basis, design_matrix
from .unimodal import (
    DEFAULT_LAMBDA_GRID,
    NumericalError,
    PenaltySpec,
    RemlProblem,
    _LeastSquares,
    ridge_penalty,
)

logger = logging.getLogger(__name__)

ADAPTIVE_BETA = 1e-5
ZERO_THRESHOLD = 1e-4
OUTER_TOL = 1e-3
INNER_STEPS = 5


def unit_scale(z) -> np.ndarray:
    """Map a vector onto ``[0, 1]`` (divide by the value if it is constant)."""
    z = np.asarray(z, dtype=float)
    if z.size == 0:
        raise ValueError("empty vector")
    lo, hi = z.min(), z.max()
    if lo < hi:
        return (z - lo) / (hi - lo)
    if hi == 0:
        raise ValueError("cannot unit-scale an all-zero vector")
    return z / hi


class FixedModeSmoother:
    """Fixed-mode unimodal spline fits sharing one design matrix.

    Lambda is chosen per response by approximate REML (or held at ``lam``);
    factorizations are cached per lambda value.
    """

    def __init__(self, B, penalty: PenaltySpec, sigma2: float, lam: float | None = None,
                 lam_grid=DEFAULT_LAMBDA_GRID):
        self.B = np.asarray(B, dtype=float)
        self.penalty = penalty
        self.sigma2 = float(sigma2)
        self.lam = lam
        self.lam_grid = np.asarray(lam_grid, dtype=float)
        self._reml = RemlProblem(self.B, penalty, sigma2) if lam is None else None
        self._ls = {}

    def select_lambda(self, y) -> float:
        return float(self.lam) if self.lam is not None else self._reml.select(y, self.lam_grid)

    def coef(self, y, mode: int) -> tuple[np.ndarray, float]:
        lam = self.select_lambda(y)
        ls = self._ls.get(lam)
        if ls is None:
            ls = self._ls[lam] = _LeastSquares(self.B, self.penalty, lam, self.sigma2)
        return ls.solve_mode(ls.rhs(y), mode), lam

    def __call__(self, y, mode: int) -> np.ndarray:
        return self.B @ self.coef(y, mode)[0]


def _ridge_solve(GtG, Gty, weights):
    M = GtG.copy()
    M[np.diag_indices_from(M)] += weights
    try:
        return np.linalg.solve(M, Gty)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("singular system in pulse update") from exc


@dataclass
class VaryingDecoResult:
    G: np.ndarray
    a: np.ndarray
    fitted: np.ndarray  # unit scale
    coefs: np.ndarray  # d x d, column j generates G[:, j]
    lams: np.ndarray
    basis: BSplineBasis
    x: np.ndarray
    offset: float
    scale: float
    iterations: int
    converged: bool
    flags: list = field(default_factory=list)

    @property
    def active_set(self) -> np.ndarray:
        return np.flatnonzero(self.a)

    def fitted_response(self) -> np.ndarray:
        return self.fitted * self.scale + self.offset

    def peaks(self) -> np.ndarray:
        """Unit-scale peak curves ``a_j * G[:, j]`` for the active columns."""
        idx = self.active_set
        return self.G[:, idx] * self.a[idx]

    def peak_locations(self) -> np.ndarray:
        """x-position where each active column reaches its maximum."""
        return self.x[np.argmax(self.G[:, self.active_set], axis=0)]

    def heights(self) -> np.ndarray:
        """Peak heights in response units."""
        return self.a[self.active_set] * self.scale


def varying_l0_fit(x, y, q: int = 200, k: int = 3, kappa: float = 0.002,
                   sigma2: float | None = None, lam: float | None = None,
                   lam_grid=DEFAULT_LAMBDA_GRID, max_outer: int = 200,
                   penalty: PenaltySpec | None = None) -> VaryingDecoResult:
    """Blind L0 deconvolution with one fixed-mode unimodal spline per column.

    ``sigma2`` is the noise variance in response units; it is rescaled along
    with ``y``.  The subfits use a ridge penalty with lambda chosen by
    approximate REML unless ``lam`` is given.

    Note that the first reweighted pulse update after initialization leaves
    out the ``kappa`` factor while the loop keeps it.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1 or np.any(np.diff(x) <= 0):
        raise ValueError("x must be strictly increasing and match y")
    if not kappa > 0:
        raise ValueError("kappa must be positive")
    if sigma2 is None or not sigma2 > 0:
        raise ValueError("a positive noise variance is required")
    offset = float(y.min())
    scale = float(y.max() - y.min())
    if not scale > 0:
        raise ValueError("constant signal")

    # Initialization
    y = unit_scale(y)
    basis = build_basis(x[0], x[-1], q, k)
    d = basis.dim
    beta = ADAPTIVE_BETA
    B = design_matrix(basis, x)
    smoother = FixedModeSmoother(B, penalty or ridge_penalty(d), sigma2 / scale**2,
                                 lam=lam, lam_grid=lam_grid)
    G = np.empty((y.size, d))
    coefs = np.empty((d, d))
    lams = np.empty(d)
    for j in range(d):
        coefs[:, j], lams[j] = smoother.coef(y, j + 1)
        G[:, j] = unit_scale(B @ coefs[:, j])
    GtG = G.T @ G
    Gty = G.T @ y
    a = _ridge_solve(GtG, Gty, np.full(d, kappa))
    a = _ridge_solve(GtG, Gty, 1.0 / (a**2 + beta**2))
    a[a < ZERO_THRESHOLD] = 0.0
    if not np.any(a):
        raise NumericalError("no pulse survived initialization; kappa is probably too large")

    flags = []
    converged = False
    for outer in range(1, max_outer + 1):
        a_old = a.copy()
        nz = np.flatnonzero(a)
        L = sorted({j for l in nz for j in range(l - 2, l + 3) if 0 <= j < d})
        for j in L:
            a_tilde = a.copy()
            a_tilde[j] = 0.0
            y_tilde = y - G @ a_tilde
            coefs[:, j], lams[j] = smoother.coef(y_tilde, j + 1)
            G[:, j] = unit_scale(B @ coefs[:, j])
            GtG = G.T @ G
            Gty = G.T @ y
            for _ in range(INNER_STEPS):
                a = _ridge_solve(GtG, Gty, kappa / (a**2 + beta**2))
            a[a < ZERO_THRESHOLD] = 0.0
        if np.max(np.abs(a_old - a)) < OUTER_TOL:
            converged = True
            break
    if not converged:
        flags.append(f"outer iteration cap {max_outer} reached")
        logger.warning(flags[-1])
    return VaryingDecoResult(G=G, a=a, fitted=G @ a, coefs=coefs, lams=lams, basis=basis,
                             x=x, offset=offset, scale=scale, iterations=outer,
                             converged=converged, flags=flags)


def estimate_noise_from_window(y, lo: int = 36, hi: int = 700) -> float:
    """Sample variance of ``y[lo-1 : hi]`` (1-based inclusive window)."""
    y = np.asarray(y, dtype=float)
    if lo < 1 or hi > y.size or hi < lo:
        raise ValueError(f"window {lo}..{hi} outside 1..{y.size}")
    if hi - lo + 1 < 30:
        raise ValueError("noise window needs at least 30 observations")
    var = float(np.var(y[lo - 1:hi], ddof=1))
    if var == 0:
        raise ValueError("noise window is constant; supply the variance explicitly")
    return var


