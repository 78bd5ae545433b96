"""Penalized unimodal spline regression.

The coefficient vector is constrained to the cone

    S_m = {beta : beta_i >= beta_{i-1} for i <= m, beta_i <= beta_{i-1} for i > m}

(1-based ``m`` in ``1..d``), and the fit minimizes

    (1/sigma2) * ||y - B beta||^2 + lam * (beta - beta0)' Omega (beta - beta0).

For a fixed mode the problem is solved exactly by writing
``beta = c + cumsum(sign * s)`` with a free level ``c`` and nonnegative steps
``s``, which turns the cone constraint into plain nonnegativity (NNLS).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, eigh, solve_triangular
from scipy.optimize import nnls

from .spline_basis import BSplineBasis, SplineFunction

logger = logging.getLogger(__name__)

DEFAULT_LAMBDA_GRID = np.logspace(-6, 6, 50)
TIE_RTOL = 1e-12


class NumericalError(RuntimeError):
    """A linear system or optimizer failed on otherwise valid input."""


class ConvergenceError(RuntimeError):
    """An iterative procedure hit its iteration cap."""


# ---------------------------------------------------------------------------
# penalties
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PenaltySpec:
    omega: np.ndarray
    beta0: np.ndarray
    kind: str = "against_parametric"

    def __post_init__(self):
        omega = np.asarray(self.omega, dtype=float)
        beta0 = np.asarray(self.beta0, dtype=float)
        d = omega.shape[0]
        if omega.shape != (d, d) or beta0.shape != (d,):
            raise ValueError("penalty matrix must be d x d and beta0 length d")
        if not np.allclose(omega, omega.T, atol=1e-12):
            raise ValueError("penalty matrix must be symmetric")
        if np.linalg.eigvalsh(omega).min() < -1e-10:
            raise ValueError("penalty matrix must be positive semidefinite")
        object.__setattr__(self, "omega", omega)
        object.__setattr__(self, "beta0", beta0)

    @property
    def dim(self) -> int:
        return self.omega.shape[0]

    @cached_property
    def factor(self) -> np.ndarray:
        """Matrix ``R`` with ``R'R = Omega`` (rows only for positive eigenvalues)."""
        if self.kind == "ridge":
            return np.eye(self.dim)
        if self.kind == "second_order_difference":
            return np.diff(np.eye(self.dim), n=2, axis=0)
        w, v = np.linalg.eigh(self.omega)
        keep = w > 1e-10 * max(w.max(), 1.0)
        return np.sqrt(w[keep])[:, None] * v[:, keep].T

    @cached_property
    def pseudo_logdet(self) -> tuple[int, float]:
        """Rank and log of the product of nonzero eigenvalues of Omega."""
        w = np.linalg.eigvalsh(self.omega)
        keep = w > 1e-10 * max(w.max(), 1.0)
        return int(keep.sum()), float(np.sum(np.log(w[keep])))


def ridge_penalty(d: int) -> PenaltySpec:
    return PenaltySpec(np.eye(d), np.zeros(d), "ridge")


def difference_penalty(d: int, order: int = 2) -> PenaltySpec:
    D = np.diff(np.eye(d), n=order, axis=0)
    kind = "second_order_difference" if order == 2 else "against_parametric"
    return PenaltySpec(D.T @ D, np.zeros(d), kind)


def make_penalty(kind: str, d: int) -> PenaltySpec:
    if kind == "ridge":
        return ridge_penalty(d)
    if kind in ("second_order_difference", "difference", "d2"):
        return difference_penalty(d, 2)
    raise ValueError(f"unknown penalty kind {kind!r}")


# ---------------------------------------------------------------------------
# fixed-mode fit
# ---------------------------------------------------------------------------

def step_matrix(d: int, m: int) -> np.ndarray:
    """Map ``(c, s_2..s_d)`` to coefficients in ``S_m`` (``s >= 0``)."""
    if not 1 <= m <= d:
        raise ValueError(f"mode must lie in 1..{d}, got {m}")
    T = np.zeros((d, d))
    T[:, 0] = 1.0
    for i in range(1, d):
        T[i:, i] = 1.0 if i < m else -1.0
    return T


def in_cone(beta: np.ndarray, m: int, tol: float = 1e-9) -> bool:
    steps = np.diff(beta)
    return bool(np.all(steps[: m - 1] >= -tol) and np.all(steps[m - 1:] <= tol))


class _LeastSquares:
    """Stacked least-squares form of pRSS reduced to a d x d triangle.

    ``prss(beta) = ||R beta - Q'b||^2 + const`` where ``b`` stacks the scaled
    response and the penalty target.  The factorization depends only on the
    design, penalty, lambda and sigma2, so it is reused across responses.
    """

    def __init__(self, B, penalty: PenaltySpec, lam: float, sigma2: float):
        B = np.asarray(B, dtype=float)
        if B.ndim != 2:
            raise ValueError("design must be a matrix")
        if penalty.dim != B.shape[1]:
            raise ValueError("penalty dimension does not match design columns")
        if lam < 0 or not np.isfinite(lam):
            raise ValueError("lambda must be finite and nonnegative")
        if not sigma2 > 0:
            raise ValueError("sigma2 must be positive")
        self.n = B.shape[0]
        self._s = np.sqrt(sigma2)
        R_pen = np.sqrt(lam) * penalty.factor
        self._target = R_pen @ penalty.beta0
        Q, R = np.linalg.qr(np.vstack([B / self._s, R_pen]), mode="reduced")
        self.Q = Q
        self.R = R

    def rhs(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if y.shape != (self.n,):
            raise ValueError(f"response length {y.shape} does not match {self.n} design rows")
        return self.Q[: self.n].T @ y / self._s + self.Q[self.n:].T @ self._target

    def solve_mode(self, z: np.ndarray, m: int) -> np.ndarray:
        d = self.R.shape[1]
        T = step_matrix(d, m)
        A = self.R @ T
        a0 = A[:, 0]
        denom = a0 @ a0
        if d == 1:
            return T @ np.array([a0 @ z / denom])
        A1 = A[:, 1:]
        # project out the free level, then NNLS on the steps
        P1 = A1 - np.outer(a0, a0 @ A1) / denom
        pz = z - a0 * (a0 @ z) / denom
        try:
            steps, _ = nnls(P1, pz, maxiter=50 * d)
        except RuntimeError as exc:
            raise ConvergenceError(f"NNLS did not converge for mode {m}") from exc
        c = a0 @ (z - A1 @ steps) / denom
        return T @ np.concatenate([[c], steps])


def prss(B, y, beta, penalty: PenaltySpec, lam: float, sigma2: float) -> float:
    r = y - B @ beta
    dev = beta - penalty.beta0
    return float(r @ r / sigma2 + lam * dev @ penalty.omega @ dev)


def fit_fixed_mode(B, y, m: int, penalty: PenaltySpec, lam: float,
                   sigma2: float) -> np.ndarray:
    """Coefficients minimizing pRSS over the cone with mode ``m`` (1-based)."""
    ls = _LeastSquares(B, penalty, lam, sigma2)
    return ls.solve_mode(ls.rhs(y), m)


# ---------------------------------------------------------------------------
# approximate REML
# ---------------------------------------------------------------------------

class RemlProblem:
    """Restricted log-likelihood of the smoothing parameter.

    The coefficients get an untruncated normal prior with mean ``beta0`` and
    precision ``lam * Omega``; directions in the null space of Omega get a
    flat prior. Integrating them out gives

        l(lam) = -n/2 log(2 pi sigma2) + (r/2) log(lam) + 1/2 log|Omega|_+
                 + (d - r)/2 log(2 pi) - 1/2 log|H| - 1/2 min_beta pRSS

    with ``H = B'B/sigma2 + lam Omega`` and ``r = rank(Omega)``.  The
    response-independent part is factored once so that many responses can be
    scored cheaply against the same design.
    """

    def __init__(self, B, penalty: PenaltySpec, sigma2: float):
        B = np.asarray(B, dtype=float)
        if penalty.dim != B.shape[1]:
            raise ValueError("penalty dimension does not match design columns")
        if not sigma2 > 0:
            raise ValueError("sigma2 must be positive")
        self.B = B
        self.penalty = penalty
        self.sigma2 = float(sigma2)
        self.n, self.d = B.shape
        self.rank, self.logdet_omega = penalty.pseudo_logdet
        G = B.T @ B / sigma2
        self._BtB = G
        try:
            L = np.linalg.cholesky(G)
            diag = np.diag(L)
            if diag.min() < 1e-7 * diag.max():
                raise LinAlgError("ill-conditioned Gram matrix")
            Linv_omega = solve_triangular(L, penalty.omega, lower=True)
            M = solve_triangular(L, Linv_omega.T, lower=True)
            s, U = eigh((M + M.T) / 2)
            self._L = L
            self._s = np.clip(s, 0.0, None)
            self._U = U
            self._logdet_G = 2.0 * np.sum(np.log(np.diag(L)))
            self._fast = True
        except LinAlgError:
            self._fast = False

    def loglik(self, y, lam_grid) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        lam_grid = np.atleast_1d(np.asarray(lam_grid, dtype=float))
        if y.shape != (self.n,):
            raise ValueError("response length does not match design rows")
        if lam_grid.size == 0 or np.any(lam_grid <= 0):
            raise ValueError("lambda grid must be nonempty and positive")
        if self._fast:
            return self._loglik_fast(y, lam_grid)
        out = np.empty(lam_grid.size)
        for i, lam in enumerate(lam_grid):
            try:
                out[i] = self._loglik_direct(y, lam)
            except NumericalError:
                out[i] = np.nan
        return out

    def _base(self, y, lam):
        n, d, r = self.n, self.d, self.rank
        return (-0.5 * n * np.log(2 * np.pi * self.sigma2) + 0.5 * r * np.log(lam)
                + 0.5 * self.logdet_omega + 0.5 * (d - r) * np.log(2 * np.pi))

    def _loglik_direct(self, y, lam):
        H = self._BtB + lam * self.penalty.omega
        try:
            cf = cho_factor(H)
        except LinAlgError as exc:
            raise NumericalError(f"singular system at lambda={lam:g}") from exc
        rhs = self.B.T @ y / self.sigma2 + lam * self.penalty.omega @ self.penalty.beta0
        beta = cho_solve(cf, rhs)
        logdet_H = 2.0 * np.sum(np.log(np.diag(cf[0])))
        p = prss(self.B, y, beta, self.penalty, lam, self.sigma2)
        return self._base(y, lam) - 0.5 * logdet_H - 0.5 * p

    def _loglik_fast(self, y, lam_grid):
        # H = L (I + lam M) L' with M = U diag(s) U'
        om, b0 = self.penalty.omega, self.penalty.beta0
        By = self.B.T @ y / self.sigma2
        Ob0 = om @ b0
        u1 = self._U.T @ solve_triangular(self._L, By, lower=True)
        u2 = self._U.T @ solve_triangular(self._L, Ob0, lower=True)
        yy = y @ y / self.sigma2
        b0Ob0 = b0 @ Ob0
        out = np.empty(lam_grid.size)
        for i, lam in enumerate(lam_grid):
            w = u1 + lam * u2
            denom = 1.0 + lam * self._s
            # min pRSS = y'y/s2 + lam b0'Om b0 - rhs' H^{-1} rhs
            p = yy + lam * b0Ob0 - np.sum(w * w / denom)
            logdet_H = self._logdet_G + np.sum(np.log(denom))
            out[i] = self._base(y, lam) - 0.5 * logdet_H - 0.5 * p
        return out

    def select(self, y, lam_grid=DEFAULT_LAMBDA_GRID) -> float:
        ll = self.loglik(y, lam_grid)
        if not np.any(np.isfinite(ll)):
            raise NumericalError("restricted likelihood failed at every grid point")
        ll = np.where(np.isfinite(ll), ll, -np.inf)
        return float(np.asarray(lam_grid, dtype=float)[int(np.argmax(ll))])


def reml_loglik(B, y, penalty: PenaltySpec, sigma2: float, lam_grid) -> np.ndarray:
    return RemlProblem(B, penalty, sigma2).loglik(y, lam_grid)


def reml_select_lambda(B, y, penalty: PenaltySpec, sigma2: float,
                       lam_grid=DEFAULT_LAMBDA_GRID) -> float:
    """Grid value maximizing the approximate restricted likelihood."""
    return RemlProblem(B, penalty, sigma2).select(y, lam_grid)


def effective_df(B, penalty: PenaltySpec, lam: float, sigma2: float) -> float:
    """Trace of the unconstrained penalized hat matrix."""
    B = np.asarray(B, dtype=float)
    G = B.T @ B / sigma2
    H = G + lam * penalty.omega
    try:
        return float(np.trace(np.linalg.solve(H, G)))
    except np.linalg.LinAlgError:
        return float(np.trace(np.linalg.pinv(H) @ G))


# ---------------------------------------------------------------------------
# mode search
# ---------------------------------------------------------------------------

@dataclass
class UnimodalFit:
    coef: np.ndarray
    mode: int
    lam: float
    sigma2: float
    rss: float
    prss: float
    fitted: np.ndarray
    basis: BSplineBasis | None = None
    edf: float = float("nan")
    iterations: int = 0
    converged: bool = True
    mode_rss: np.ndarray = field(default=None, repr=False)

    @property
    def spline(self) -> SplineFunction:
        if self.basis is None:
            raise AttributeError("fit was made without a basis")
        return SplineFunction(self.basis, self.coef)


class UnimodalFitter:
    """Mode search against one design, reusing factorizations across responses.

    Backfitting and variance iteration refit the same design many times;
    the REML eigendecomposition and the per-lambda QR are kept here.
    """

    def __init__(self, B, penalty: PenaltySpec, sigma2: float, lam: float | None = None,
                 lam_grid=DEFAULT_LAMBDA_GRID, basis: BSplineBasis | None = None, modes=None):
        self.B = np.asarray(B, dtype=float)
        self.penalty = penalty
        self.sigma2 = float(sigma2)
        self.lam = lam
        self.lam_grid = lam_grid
        self.basis = basis
        self.modes = modes
        self._reml = None
        self._ls = {}
        self._edf = {}

    def select_lambda(self, y) -> float:
        if self.lam is not None:
            return float(self.lam)
        if self._reml is None:
            self._reml = RemlProblem(self.B, self.penalty, self.sigma2)
        return self._reml.select(y, self.lam_grid)

    def least_squares(self, lam: float) -> _LeastSquares:
        ls = self._ls.get(lam)
        if ls is None:
            ls = self._ls[lam] = _LeastSquares(self.B, self.penalty, lam, self.sigma2)
        return ls

    def fit(self, y) -> UnimodalFit:
        B = self.B
        y = np.asarray(y, dtype=float)
        lam = self.select_lambda(y)
        ls = self.least_squares(lam)
        z = ls.rhs(y)
        d = B.shape[1]
        modes = range(1, d + 1) if self.modes is None else self.modes
        rss_all = np.full(d, np.nan)
        betas = {}
        for m in modes:
            beta = ls.solve_mode(z, m)
            r = y - B @ beta
            rss_all[m - 1] = float(r @ r)
            betas[m] = beta
        # differences at rounding level count as ties and go to the smallest mode
        tol = TIE_RTOL * max(float(y @ y), np.finfo(float).tiny)
        rss_min = np.nanmin(rss_all)
        m = min(mm for mm in betas if rss_all[mm - 1] <= rss_min + tol)
        rss, beta = rss_all[m - 1], betas[m]
        return UnimodalFit(coef=beta, mode=m, lam=float(lam), sigma2=self.sigma2,
                           rss=rss, prss=prss(B, y, beta, self.penalty, lam, self.sigma2),
                           fitted=B @ beta, basis=self.basis,
                           edf=self.edf(lam), mode_rss=rss_all)

    def edf(self, lam: float) -> float:
        if lam not in self._edf:
            self._edf[lam] = effective_df(self.B, self.penalty, lam, self.sigma2)
        return self._edf[lam]


def fit_unimodal(B, y, penalty: PenaltySpec, sigma2: float, lam: float | None = None,
                 lam_grid=DEFAULT_LAMBDA_GRID, basis: BSplineBasis | None = None,
                 modes=None) -> UnimodalFit:
    """Fit every candidate mode and keep the one with the smallest RSS.

    ``lam=None`` selects the smoothing parameter by approximate REML over
    ``lam_grid``; the prior ignores the cone so the choice is shared by all
    modes.  Ties in RSS go to the smallest mode.
    """
    return UnimodalFitter(B, penalty, sigma2, lam, lam_grid, basis, modes).fit(y)


def fit_with_sigma_iteration(B, y, penalty: PenaltySpec, sigma2_init: float = 2.0,
                             abstol: float = 0.01, lam: float | None = None,
                             lam_grid=DEFAULT_LAMBDA_GRID, basis=None,
                             max_iter: int = 100, strict: bool = True) -> UnimodalFit:
    """Alternate the unimodal fit and ``sigma2 = RSS / (n - edf)``.

    Stops once consecutive variance estimates differ by less than ``abstol``.
    """
    if not sigma2_init > 0 or not abstol > 0:
        raise ValueError("sigma2_init and abstol must be positive")
    y = np.asarray(y, dtype=float)
    n = y.size
    # keep the variance strictly positive for exactly representable data
    floor = 1e-12 * max(float(np.var(y)), 1e-300)
    sigma2 = float(sigma2_init)
    converged = False
    for it in range(1, max_iter + 1):
        fit = fit_unimodal(B, y, penalty, sigma2, lam=lam, lam_grid=lam_grid, basis=basis)
        new = max(fit.rss / max(n - fit.edf, 1.0), floor)
        converged = abs(new - sigma2) < abstol
        sigma2 = new
        if converged:
            break
    if not converged:
        if strict:
            raise ConvergenceError(f"variance iteration did not converge in {max_iter} steps")
        logger.warning("variance iteration hit the cap of %d", max_iter)
    fit = fit_unimodal(B, y, penalty, sigma2, lam=lam, lam_grid=lam_grid, basis=basis)
    fit.iterations = it
    fit.converged = converged
    return fit
