import numpy as np
import pytest

from peakforge.additive import aic, backfit, select_L_by_aic
from peakforge.spline_basis import build_basis, design_matrix
from peakforge.synthetic import skewed_bump
from peakforge.unimodal import difference_penalty, fit_unimodal, in_cone

X = np.linspace(0, 1, 200)


def two_bumps(sep=0.4, width=0.05):
    c1 = skewed_bump(X, 0.5 - sep / 2, width, 1.0)
    c2 = skewed_bump(X, 0.5 + sep / 2, width, 0.7)
    return c1, c2


def test_single_component_reduces_to_plain_fit(rng):
    y = skewed_bump(X, 0.4, 0.1, 2.0) + 0.1 * rng.normal(size=X.size)
    fit = backfit(X, y, 1, q=20, sigma2=0.01)
    B = design_matrix(build_basis(0, 1, 20, 3), X)
    plain = fit_unimodal(B, y, difference_penalty(24), 0.01)
    np.testing.assert_allclose(fit.fitted, plain.fitted, atol=1e-6)
    assert fit.modes == [plain.mode]


def test_invariants(rng):
    c1, c2 = two_bumps()
    y = c1 + c2 + 0.05 * rng.normal(size=X.size)
    fit = backfit(X, y, 2, q=20, sigma2=0.0025)
    assert np.all(np.diff(fit.rss_trace) <= 1e-10)
    assert np.abs(fit.component_values.mean(axis=0)).max() < 1e-8
    recon = fit.alpha + sum(s(X) for s in fit.components)
    np.testing.assert_allclose(recon, fit.fitted, atol=1e-12)
    for c, m in zip(fit.coefs, fit.modes):
        assert in_cone(c, m, tol=1e-9 * max(np.abs(c).max(), 1))
    assert fit.rss == pytest.approx(np.sum((y - fit.fitted) ** 2))
    assert fit.aic == pytest.approx(aic(X.size, fit.rss, fit.edf))


def test_restart_from_converged_fit_is_a_fixed_point():
    c1, c2 = two_bumps()
    fit = backfit(X, c1 + c2, 2, q=20, sigma2=1e-4)
    assert fit.converged
    again = backfit(X, c1 + c2, 2, q=20, sigma2=1e-4, init=fit.coefs)
    assert abs(again.rss - fit.rss) < 1e-8


def test_rss_monotone_over_seeds():
    c1, c2 = two_bumps(0.3)
    for seed in range(20):
        y = c1 + c2 + 0.1 * np.random.default_rng(seed).normal(size=X.size)
        fit = backfit(X, y, 3, q=15, sigma2=0.01)
        assert np.all(np.diff(fit.rss_trace) <= 1e-10)


def test_constant_response():
    fit = backfit(X, np.full(X.size, 3.0), 2, q=10)
    assert fit.alpha == pytest.approx(3.0)
    assert np.abs(fit.component_values).max() < 1e-8
    assert fit.frozen == [0, 1]


def test_noiseless_components_recovered():
    c1, c2 = two_bumps()
    fit = backfit(X, c1 + c2, 2, q=20, sigma2=1e-4)
    truth = np.column_stack([c1 - c1.mean(), c2 - c2.mean()])
    order = np.argsort([X[np.argmax(v)] for v in fit.component_values.T])
    rmse = np.sqrt(np.mean((fit.component_values[:, order] - truth) ** 2, axis=0))
    assert np.all(rmse <= 0.02 * np.array([1.0, 0.7]))


def test_sum_is_recovered_for_noiseless_bumps():
    c1, c2 = two_bumps()
    fit = backfit(X, c1 + c2, 2, q=20, sigma2=1e-4)
    assert np.sqrt(np.mean((fit.fitted - c1 - c2) ** 2)) < 0.005


def test_validation():
    with pytest.raises(ValueError):
        backfit(X, X, 0)
    with pytest.raises(ValueError):
        backfit(X[:10], X[:10], 1, q=20)
    with pytest.raises(ValueError):
        select_L_by_aic(X, X, 0)


def test_l_max_one():
    best, table = select_L_by_aic(X, np.sin(3 * X), 1, q=10)
    assert best.L == 1 and list(table) == [1]


def test_aic_selection_small_monte_carlo():
    x = np.linspace(0, 1, 100)
    c1 = skewed_bump(x, 0.3, 0.05, 1.0)
    c2 = skewed_bump(x, 0.7, 0.05, 0.7)
    ones = twos = 0
    for seed in range(10):
        rng = np.random.default_rng(seed)
        best, _ = select_L_by_aic(x, c1 + 0.05 * rng.normal(size=x.size), 3, q=12, sigma2=0.0025)
        ones += best.L == 1
        best, _ = select_L_by_aic(x, c1 + c2 + 0.05 * rng.normal(size=x.size), 3, q=12, sigma2=0.0025)
        twos += best.L == 2
    assert ones >= 8 and twos >= 9
