"""B-spline bases on an interval with equidistant knots.

Basis functions are indexed ``0 .. d-1``; index ``j`` corresponds to the
function supported on ``knots[j] .. knots[j + degree + 1]``.  A basis built
with :func:`build_basis` has ``degree`` exterior knots on each side of
``[a, b]`` placed with the same spacing as the inner knots, so
``knots[degree] == a`` and ``knots[-degree - 1] == b``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DomainError(ValueError):
    """Raised when evaluation sites fall outside the basis domain."""


@dataclass(frozen=True, eq=False)
class BSplineBasis:
    knots: np.ndarray
    degree: int
    a: float
    b: float

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        knots.setflags(write=False)
        object.__setattr__(self, "knots", knots)
        if self.degree < 0:
            raise ValueError("degree must be nonnegative")
        if knots.ndim != 1 or knots.size < self.degree + 2:
            raise ValueError("knot sequence too short for the degree")
        if np.any(np.diff(knots) <= 0):
            raise ValueError("knots must be strictly increasing")
        # domain intervals: knots[lo] .. knots[hi]
        lo = int(np.searchsorted(knots, self.a))
        hi = int(np.searchsorted(knots, self.b))
        if knots[lo] != self.a or knots[hi] != self.b or lo < self.degree:
            raise ValueError("domain ends must be knots with enough exterior knots")
        if hi > knots.size - 1 - self.degree:
            raise ValueError("not enough exterior knots right of the domain")
        object.__setattr__(self, "_lo", lo)
        object.__setattr__(self, "_hi", hi)

    @property
    def dim(self) -> int:
        """Number of basis functions."""
        return self.knots.size - self.degree - 1

    @property
    def inner_knot_count(self) -> int:
        return self._hi - self._lo - 1

    def _interval(self, x: np.ndarray) -> np.ndarray:
        # last interval is closed on the right so that x == b is covered
        mu = np.searchsorted(self.knots, x, side="right") - 1
        return np.clip(mu, self._lo, self._hi - 1)

    def check_domain(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if not np.all(np.isfinite(x)):
            raise DomainError("evaluation sites must be finite")
        if np.any(x < self.a) or np.any(x > self.b):
            raise DomainError(f"evaluation sites outside [{self.a}, {self.b}]")
        return x

    def local_values(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Nonzero basis values at each site.

        Returns ``(mu, vals)`` where ``vals[i, r]`` is the value of basis
        function ``mu[i] - degree + r`` at ``x[i]``.
        """
        x = self.check_domain(x)
        t = self.knots
        k = self.degree
        mu = self._interval(x)
        vals = np.zeros((x.size, k + 1))
        vals[:, 0] = 1.0
        left = np.empty((x.size, k + 1))
        right = np.empty((x.size, k + 1))
        # de Boor's triangular scheme for the k+1 functions alive on [t_mu, t_mu+1)
        for j in range(1, k + 1):
            left[:, j] = x - t[mu + 1 - j]
            right[:, j] = t[mu + j] - x
            saved = np.zeros(x.size)
            for r in range(j):
                temp = vals[:, r] / (right[:, r + 1] + left[:, j - r])
                vals[:, r] = saved + right[:, r + 1] * temp
                saved = left[:, j - r] * temp
            vals[:, j] = saved
        return mu, vals


def build_basis(a: float, b: float, q: int, k: int) -> BSplineBasis:
    """Equidistant basis of degree ``k`` with ``q`` inner knots on ``[a, b]``."""
    if not (np.isfinite(a) and np.isfinite(b)):
        raise ValueError("interval bounds must be finite")
    if not a < b:
        raise ValueError("need a < b")
    if int(q) != q or q < 0:
        raise ValueError("inner knot count q must be a nonnegative integer")
    if int(k) != k or k < 1:
        raise ValueError("degree k must be an integer >= 1")
    q, k = int(q), int(k)
    h = (b - a) / (q + 1)
    knots = a + h * np.arange(-k, q + k + 2)
    # pin the domain ends exactly
    knots[k] = a
    knots[q + k + 1] = b
    return BSplineBasis(knots, k, float(a), float(b))


def eval_basis(basis: BSplineBasis, x: float) -> np.ndarray:
    """Values of all ``d`` basis functions at a single site."""
    return design_matrix(basis, [x])[0]


def design_matrix(basis: BSplineBasis, xs) -> np.ndarray:
    """Dense ``n x d`` matrix with ``B[i, j] = N_j(xs[i])``."""
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    if xs.size == 0:
        raise ValueError("no evaluation sites")
    mu, vals = basis.local_values(xs)
    k = basis.degree
    out = np.zeros((xs.size, basis.dim))
    rows = np.arange(xs.size)[:, None]
    cols = mu[:, None] - k + np.arange(k + 1)[None, :]
    out[rows, cols] = vals
    return out


@dataclass(frozen=True, eq=False)
class SplineFunction:
    basis: BSplineBasis
    coef: np.ndarray

    def __post_init__(self):
        coef = np.asarray(self.coef, dtype=float)
        if coef.shape != (self.basis.dim,):
            raise ValueError(f"expected {self.basis.dim} coefficients, got {coef.shape}")
        object.__setattr__(self, "coef", coef)

    def __call__(self, x):
        x_arr = np.asarray(x, dtype=float)
        mu, vals = self.basis.local_values(x_arr)
        k = self.basis.degree
        idx = mu[:, None] - k + np.arange(k + 1)[None, :]
        out = np.sum(vals * self.coef[idx], axis=1)
        return out.reshape(x_arr.shape) if x_arr.ndim else float(out[0])


def eval_spline(s: SplineFunction, x):
    return s(x)


def derivative(s: SplineFunction) -> SplineFunction:
    """First derivative as a spline of one degree lower on the same knots.

    The lower-degree basis on the same knot vector has one extra function at
    each end; both vanish on the domain and get zero coefficients.
    """
    basis = s.basis
    k = basis.degree
    if k < 1:
        raise ValueError("cannot differentiate a piecewise constant spline")
    t = basis.knots
    d = basis.dim
    beta = s.coef
    j = np.arange(1, d)
    inner = k * (beta[1:] - beta[:-1]) / (t[j + k] - t[j])
    lower = BSplineBasis(t, k - 1, basis.a, basis.b)
    return SplineFunction(lower, np.concatenate([[0.0], inner, [0.0]]))
