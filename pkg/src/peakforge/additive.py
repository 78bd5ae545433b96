"""Additive unimodal regression fitted by backfitting.

``f(x) = alpha + sum_l g_l(x)`` where every ``g_l`` is a unimodal spline with
its own mode and smoothing parameter.  Components are kept centered over the
observations; the intercept absorbs the centering shifts so the fitted values
are unchanged by it.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .spline_basis import BSplineBasis, SplineFunction, build_basis, design_matrix
from .unimodal import DEFAULT_LAMBDA_GRID, PenaltySpec, UnimodalFitter, make_penalty

logger = logging.getLogger(__name__)


@dataclass
class AdditiveFit:
    alpha: float
    coefs: list  # one coefficient vector per component
    modes: list
    lams: list
    edfs: list
    basis: BSplineBasis
    fitted: np.ndarray
    component_values: np.ndarray  # n x L, centered
    rss: float
    rss_trace: list
    cycles: int
    converged: bool
    frozen: list = field(default_factory=list)
    aic: float = float("nan")

    @property
    def L(self) -> int:
        return len(self.coefs)

    @property
    def components(self) -> list[SplineFunction]:
        return [SplineFunction(self.basis, c) for c in self.coefs]

    @property
    def edf(self) -> float:
        return 1.0 + float(np.sum(self.edfs))


def aic(n: int, rss: float, edf: float) -> float:
    return n * np.log(max(rss, np.finfo(float).tiny) / n) + 2.0 * edf


def backfit(x, y, L: int, q: int = 20, k: int = 3, penalty: str | PenaltySpec = "second_order_difference",
            sigma2: float = 1.0, lam: float | None = None, lam_grid=DEFAULT_LAMBDA_GRID,
            max_cycles: int = 50, rtol: float = 1e-6, basis: BSplineBasis | None = None,
            init: list | None = None) -> AdditiveFit:
    """Cyclic refitting of ``L`` unimodal components on partial residuals.

    A component update is kept only when it does not increase the residual
    sum of squares, so RSS is non-increasing over cycles.  A component whose
    range drops below ``1e-6`` of the response range is frozen at zero.
    ``init`` optionally seeds the component coefficient vectors.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if L < 1:
        raise ValueError("need at least one component")
    if x.shape != y.shape or x.ndim != 1 or np.any(np.diff(x) <= 0):
        raise ValueError("x must be strictly increasing and match y")
    basis = basis or build_basis(x[0], x[-1], q, k)
    d = basis.dim
    if x.size < d:
        raise ValueError(f"{x.size} observations are too few for {d} basis functions")
    B = design_matrix(basis, x)
    pen = penalty if isinstance(penalty, PenaltySpec) else make_penalty(penalty, d)
    fitter = UnimodalFitter(B, pen, sigma2, lam=lam, lam_grid=lam_grid, basis=basis)
    n = y.size
    yrange = float(np.ptp(y))

    alpha = float(y.mean())
    coefs = [np.zeros(d) for _ in range(L)] if init is None else [np.array(c, float) for c in init]
    vals = np.column_stack([B @ c for c in coefs])
    modes = [0] * L
    lams = [0.0] * L
    edfs = [0.0] * L
    frozen = [False] * L

    def rss_of(alpha_, vals_):
        r = y - alpha_ - vals_.sum(axis=1)
        return float(r @ r)

    rss = rss_of(alpha, vals)
    trace = [rss]
    converged = False
    cycle = 0
    for cycle in range(1, max_cycles + 1):
        for l in range(L):
            if frozen[l]:
                continue
            partial = y - alpha - vals.sum(axis=1) + vals[:, l]
            fit = fitter.fit(partial)
            new = fit.fitted
            shift = float(new.mean())
            cand_vals = vals.copy()
            cand_vals[:, l] = new - shift
            cand_alpha = alpha + shift
            cand_rss = rss_of(cand_alpha, cand_vals)
            if cand_rss <= rss:
                coefs[l] = fit.coef - shift
                vals, alpha, rss = cand_vals, cand_alpha, cand_rss
                modes[l], lams[l], edfs[l] = fit.mode, fit.lam, fit.edf
            if np.ptp(vals[:, l]) < 1e-6 * max(yrange, 1e-300):
                frozen[l] = True
                alpha += float(vals[:, l].mean())
                vals[:, l] = 0.0
                coefs[l] = np.zeros(d)
                edfs[l] = 0.0
                rss = rss_of(alpha, vals)
        prev = trace[-1]
        trace.append(rss)
        if abs(prev - rss) <= rtol * max(prev, 1e-300):
            converged = True
            break
    if not converged:
        logger.warning("backfitting did not converge in %d cycles", max_cycles)
    fitted = alpha + vals.sum(axis=1)
    return AdditiveFit(alpha=alpha, coefs=coefs, modes=modes, lams=lams, edfs=edfs,
                       basis=basis, fitted=fitted, component_values=vals, rss=rss,
                       rss_trace=trace, cycles=cycle, converged=converged,
                       frozen=[l for l in range(L) if frozen[l]],
                       aic=aic(n, rss, 1.0 + sum(edfs)))


def select_L_by_aic(x, y, L_max: int = 3, **kwargs) -> tuple[AdditiveFit, dict]:
    """Fit ``L = 1..L_max`` components and keep the smallest AIC.

    Returns the chosen fit and a table ``{L: aic or error message}``.
    """
    if L_max < 1:
        raise ValueError("L_max must be at least 1")
    table = {}
    best = None
    for L in range(1, L_max + 1):
        try:
            fit = backfit(x, y, L, **kwargs)
        except (ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
            table[L] = str(exc)
            logger.warning("L=%d failed: %s", L, exc)
            continue
        table[L] = fit.aic
        if best is None or fit.aic < best.aic:
            best = fit
    if best is None:
        raise RuntimeError("every candidate number of components failed")
    return best, table

