"""Independent reference computations used by the test-suite.

These are deliberately naive: direct transcriptions of the defining
formulas with no shared code paths with the package internals.
"""

import itertools

import numpy as np


def cox_de_boor(knots, degree, j, x, right_end=None):
    """N_{j,degree+1}(x) by the textbook recursion, 0/0 taken as 0.

    ``right_end`` closes the interval ending at that knot so the basis is
    evaluated on a closed domain.
    """
    t = knots
    if degree == 0:
        if right_end is not None and x == right_end:
            # evaluate as the limit from the left
            return 1.0 if t[j] < x <= t[j + 1] else 0.0
        return 1.0 if t[j] <= x < t[j + 1] else 0.0
    out = 0.0
    den1 = t[j + degree] - t[j]
    if den1 > 0:
        out += (x - t[j]) / den1 * cox_de_boor(t, degree - 1, j, x, right_end)
    den2 = t[j + degree + 1] - t[j + 1]
    if den2 > 0:
        out += (t[j + degree + 1] - x) / den2 * cox_de_boor(t, degree - 1, j + 1, x, right_end)
    return out


def basis_vector(knots, degree, x, right_end=None):
    d = len(knots) - degree - 1
    return np.array([cox_de_boor(knots, degree, j, x, right_end) for j in range(d)])


def cone_projection_steps(d, m):
    """Sign pattern of consecutive differences allowed by mode m (1-based)."""
    return np.array([1.0 if i < m else -1.0 for i in range(1, d)])


def projected_gradient_min(B, y, m, starts=100, seed=0, iters=20000):
    """Minimize ||y - B beta||^2 over S_m by projected gradient from many starts.

    Works in (level, steps) coordinates where the cone is the orthant
    steps >= 0, so the projection is a clip.  All starts run together as
    the rows of one matrix; each run is accelerated with restarts.
    """
    n, d = B.shape
    sign = cone_projection_steps(d, m)
    T = np.zeros((d, d))
    T[:, 0] = 1.0
    for i in range(1, d):
        T[i:, i] = sign[i - 1]
    A = B @ T
    H = 2 * A.T @ A
    g0 = -2 * A.T @ y
    step = 1.0 / np.linalg.eigvalsh(H).max()
    rng = np.random.default_rng(seed)
    th = rng.normal(scale=np.abs(y).max() + 1, size=(starts, d))
    th[:, 1:] = np.abs(th[:, 1:])

    def objective(theta):
        r = y[None, :] - theta @ A.T
        return np.sum(r * r, axis=1)

    z = th.copy()
    tk = 1.0
    f_old = objective(th)
    for _ in range(iters):
        new = z - step * (z @ H + g0)
        new[:, 1:] = np.maximum(new[:, 1:], 0.0)
        tk1 = (1 + np.sqrt(1 + 4 * tk * tk)) / 2
        f_new = objective(new)
        z = new + (tk - 1) / tk1 * (new - th)
        if np.any(f_new > f_old):
            # gradient-based restart keeps the sequence monotone
            z, tk1 = new.copy(), 1.0
        th, tk, f_old = new, tk1, f_new
    best = int(np.argmin(f_old))
    return float(f_old[best]), T @ th[best]


def _groupings(d):
    """Every way to merge neighbouring coefficients into constant runs."""
    for binding in itertools.product([False, True], repeat=d - 1):
        groups = [[0]]
        for i, b in enumerate(binding):
            if b:
                groups[-1].append(i + 1)
            else:
                groups.append([i + 1])
        yield groups


def enumerate_cone_fits(B, y, aug=None):
    """Exact least squares over every S_m, m = 1..d, by face enumeration.

    The optimum over a polyhedral cone is the unconstrained optimum on one
    of its faces.  Faces of S_m are coefficient vectors made of constant
    runs; the least-squares fit on each face is computed once and checked
    against every mode.  ``aug`` = (A, b) appends penalty rows.

    Returns (objective per mode, coefficient vectors per mode).
    """
    n, d = B.shape
    best_val = np.full(d, np.inf)
    best_beta = [None] * d
    M_full = B if aug is None else np.vstack([B, aug[0]])
    t = y if aug is None else np.concatenate([y, aug[1]])
    signs = [cone_projection_steps(d, m) for m in range(1, d + 1)]
    for groups in _groupings(d):
        M = np.column_stack([M_full[:, g].sum(axis=1) for g in groups])
        c, *_ = np.linalg.lstsq(M, t, rcond=None)
        beta = np.concatenate([[c[k]] * len(g) for k, g in enumerate(groups)])
        r = t - M_full @ beta
        val = r @ r
        steps = np.diff(beta)
        for m in range(d):
            if val < best_val[m] and np.all(steps * signs[m] >= -1e-12):
                best_val[m], best_beta[m] = val, beta
    return best_val, best_beta


def reml_by_quadrature(B, y, omega, lam, sigma2, points=161, width=9.0):
    """log of the integral of N(y | B beta, sigma2) times the (possibly
    improper) Gaussian prior on beta, by a tensor trapezoid rule in 3-d."""
    n, d = B.shape
    assert d == 3
    H = B.T @ B / sigma2 + lam * omega
    center = np.linalg.solve(H, B.T @ y / sigma2)
    half = width * np.sqrt(np.diag(np.linalg.inv(H)))
    axes = [np.linspace(center[i] - half[i], center[i] + half[i], points) for i in range(d)]
    g = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    r = y[None, :] - g @ B.T
    ev = np.linalg.eigvalsh(omega)
    pos = ev[ev > 1e-10 * ev.max()]
    rank = pos.size
    log_lik = -0.5 * n * np.log(2 * np.pi * sigma2) - 0.5 * np.sum(r * r, axis=1) / sigma2
    log_prior = (-0.5 * rank * np.log(2 * np.pi) + 0.5 * rank * np.log(lam)
                 + 0.5 * np.sum(np.log(pos)) - 0.5 * lam * np.einsum("ij,jk,ik->i", g, omega, g))
    v = log_lik + log_prior
    vmax = v.max()
    cell = np.prod([ax[1] - ax[0] for ax in axes])
    # trapezoid weights
    w1 = [np.ones(points) for _ in range(d)]
    for w in w1:
        w[[0, -1]] = 0.5
    W = np.einsum("i,j,k->ijk", *w1).reshape(-1)
    return float(vmax + np.log(np.sum(W * np.exp(v - vmax)) * cell))


def algorithm1(x, y, q, k, kappa, sigma2, lam_grid, max_outer=200):
    """Varying-shape L0 deconvolution written out step by step.

    Spline subfits call the package's fixed-mode solver and REML grid
    search, which are checked separately; everything else (scaling, index
    sets, weight updates, stopping rule) is transcribed here with 1-based
    indices; linear systems use the same LAPACK solve.
    """
    from peakforge.spline_basis import build_basis, design_matrix
    from peakforge.unimodal import fit_fixed_mode, reml_select_lambda, ridge_penalty

    def u(z):
        if z.min() < z.max():
            return (z - z.min()) / (z.max() - z.min())
        return z / z.max()

    n = len(y)
    scale = y.max() - y.min()
    y = u(np.asarray(y, float))
    d = q + k + 1
    beta = 1e-5
    basis = build_basis(x[0], x[-1], q, k)
    B = design_matrix(basis, x)
    pen = ridge_penalty(d)
    s2 = sigma2 / scale ** 2

    def column(target, j):
        lam = reml_select_lambda(B, target, pen, s2, lam_grid)
        return u(B @ fit_fixed_mode(B, target, j, pen, lam, s2))

    G = np.zeros((n, d))
    for j in range(1, d + 1):
        G[:, j - 1] = column(y, j)
    W = kappa * np.eye(d)
    a = np.linalg.solve(G.T @ G + W, G.T @ y)
    W = np.diag([1.0 / (a[j] ** 2 + beta ** 2) for j in range(d)])
    a = np.linalg.solve(G.T @ G + W, G.T @ y)
    for j in range(d):
        if a[j] < 0.0001:
            a[j] = 0.0
    for _ in range(max_outer):
        a_old = a.copy()
        L = set()
        for l in range(1, d + 1):
            if a[l - 1] != 0:
                for j in range(l - 2, l + 3):
                    if 1 <= j <= d:
                        L.add(j)
        for j in sorted(L):
            a_t = a.copy()
            a_t[j - 1] = 0.0
            y_t = y - G @ a_t
            G[:, j - 1] = column(y_t, j)
            for _ in range(5):
                W = np.diag([1.0 / (a[i] ** 2 + beta ** 2) for i in range(d)])
                a = np.linalg.solve(G.T @ G + kappa * W, G.T @ y)
            for i in range(d):
                if a[i] < 0.0001:
                    a[i] = 0.0
        if max(abs(a_old[i] - a[i]) for i in range(d)) < 0.001:
            break
    return a, G
