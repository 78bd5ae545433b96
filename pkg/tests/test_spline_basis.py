import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import basis_vector
from peakforge.spline_basis import (
    DomainError,
    SplineFunction,
    build_basis,
    derivative,
    design_matrix,
    eval_basis,
    eval_spline,
)


def test_linear_basis_on_unit_interval():
    b = build_basis(0, 1, 0, 1)
    np.testing.assert_array_equal(b.knots, [-1, 0, 1, 2])
    assert b.dim == 2
    np.testing.assert_allclose(eval_basis(b, 0.5), [0.5, 0.5])
    np.testing.assert_allclose(eval_basis(b, 0.0), [1.0, 0.0])
    np.testing.assert_allclose(eval_basis(b, 1.0), [0.0, 1.0])


def test_dimension():
    assert build_basis(0, 10, 25, 3).dim == 29
    assert build_basis(0, 1, 3, 3).dim == 7


@pytest.mark.parametrize("args", [(0, 0, 1, 3), (1, 0, 1, 3), (0, np.inf, 1, 3),
                                  (0, 1, -1, 3), (0, 1, 2, 0), (0, 1, 1.5, 3)])
def test_build_rejects_bad_input(args):
    with pytest.raises(ValueError):
        build_basis(*args)


def test_out_of_domain():
    b = build_basis(0, 1, 3, 3)
    with pytest.raises(DomainError):
        eval_basis(b, 1.0001)
    with pytest.raises(DomainError):
        design_matrix(b, [0.5, -0.1])
    with pytest.raises(ValueError):
        design_matrix(b, [])


def test_matches_recursion_oracle():
    b = build_basis(0, 1, 3, 3)
    np.testing.assert_allclose(eval_basis(b, 0.37), basis_vector(b.knots, 3, 0.37), atol=1e-14)
    for x in np.linspace(0, 1, 41):
        expected = basis_vector(b.knots, 3, x, right_end=1.0)
        np.testing.assert_allclose(eval_basis(b, x), expected, atol=1e-14)


def test_design_matrix_rows():
    b = build_basis(0, 1, 0, 1)
    np.testing.assert_allclose(design_matrix(b, [0, 1]), np.eye(2))
    np.testing.assert_allclose(design_matrix(b, [0.5]), [[0.5, 0.5]])
    xs = np.random.default_rng(0).uniform(0, 1, 50)
    B = design_matrix(build_basis(0, 1, 10, 3), xs)
    np.testing.assert_allclose(B.sum(axis=1), 1.0, atol=1e-10)
    assert B.min() >= 0


@settings(max_examples=60, deadline=None)
@given(q=st.integers(0, 50), k=st.integers(1, 3),
       a=st.floats(-100, 100), width=st.floats(0.01, 1000), seed=st.integers(0, 2**32 - 1))
def test_partition_of_unity_local_support(q, k, a, width, seed):
    b = build_basis(a, a + width, q, k)
    x = np.random.default_rng(seed).uniform(a, a + width, 200)
    x[:2] = [a, a + width]
    B = design_matrix(b, x)
    assert np.all(np.abs(B.sum(axis=1) - 1) < 1e-10)
    assert B.min() >= 0
    t = b.knots
    j = np.arange(b.dim)
    outside = (x[:, None] < t[j][None, :]) | (x[:, None] > t[j + k + 1][None, :])
    assert np.all(B[outside] == 0)
    assert np.all(np.count_nonzero(B, axis=1) <= k + 1)


def test_eval_spline_identities():
    b = build_basis(0, 2, 5, 3)
    x = np.linspace(0, 2, 33)
    const = SplineFunction(b, np.full(b.dim, 4.2))
    np.testing.assert_allclose(const(x), 4.2)
    e1 = SplineFunction(b, np.eye(b.dim)[0])
    np.testing.assert_allclose(e1(x), design_matrix(b, x)[:, 0])
    beta = np.random.default_rng(3).normal(size=b.dim)
    s = SplineFunction(b, beta)
    mid = 1.0
    assert eval_spline(s, mid) == pytest.approx(basis_vector(b.knots, 3, mid) @ beta, abs=1e-13)


def test_convex_hull_bound(rng):
    b = build_basis(-3, 5, 12, 3)
    beta = rng.normal(size=b.dim)
    vals = SplineFunction(b, beta)(rng.uniform(-3, 5, 1000))
    assert vals.min() >= beta.min() - 1e-12
    assert vals.max() <= beta.max() + 1e-12


def test_derivative_simple_cases():
    b = build_basis(0, 1, 4, 3)
    x = np.linspace(0, 1, 17)
    zero = derivative(SplineFunction(b, np.full(b.dim, 2.0)))
    np.testing.assert_allclose(zero(x), 0, atol=1e-12)
    # s(x) = x has Greville-abscissa coefficients
    lin = build_basis(0, 1, 0, 1)
    one = derivative(SplineFunction(lin, [0.0, 1.0]))
    np.testing.assert_allclose(one(x), 1.0)
    greville = np.array([b.knots[j + 1:j + 4].mean() for j in range(b.dim)])
    np.testing.assert_allclose(derivative(SplineFunction(b, greville))(x), 1.0, atol=1e-12)


def test_derivative_of_unimodal_coefficients_matches_finite_differences():
    b = build_basis(0, 1, 8, 3)
    beta = np.array([0, 1, 3, 4, 4.5, 4.2, 3, 2, 1.5, 0.2, 0.0, -0.1])
    assert beta.size == b.dim
    s = SplineFunction(b, beta)
    ds = derivative(s)
    inner = ds.coef[1:-1]
    m = int(np.argmax(beta))
    assert np.all(inner[:m] >= 0) and np.all(inner[m:] <= 0)
    x = np.linspace(0.001, 0.999, 1000)
    h = 1e-6
    fd = (s(x + h) - s(x - h)) / (2 * h)
    np.testing.assert_allclose(ds(x), fd, atol=1e-6 * np.abs(fd).max())
