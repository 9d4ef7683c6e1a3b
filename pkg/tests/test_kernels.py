import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from operon import linalg
from operon.errors import DimensionMismatch, UnsupportedFamily
from operon.kernels import (
    KernelFamily,
    KernelParams,
    SeparableKernelParams,
    gram,
    kernel_eval,
    kernel_hyperparam_derivs,
    kernel_y_derivs,
)

ALL_FAMILIES = list(KernelFamily)


def reference_kernel(family, r, sigma2=1.0):
    """Closed forms of the scaled Euclidean distance, written independently of the package."""
    if family is KernelFamily.GAUSSIAN:
        return sigma2 * np.exp(-r * r)
    if family is KernelFamily.MATERN12:
        return sigma2 * np.exp(-r)
    if family is KernelFamily.MATERN32:
        return sigma2 * (1 + np.sqrt(3) * r) * np.exp(-np.sqrt(3) * r)
    return sigma2 * (1 + np.sqrt(5) * r + 5 * r * r / 3) * np.exp(-np.sqrt(5) * r)


@pytest.mark.parametrize("family", ALL_FAMILIES)
def test_zero_distance_gives_variance(family):
    k = KernelParams.create(family, [0.7, 2.0], 3.5)
    assert kernel_eval(k, [0.3, -1.0], [0.3, -1.0]) == pytest.approx(3.5, rel=1e-15)


def test_gaussian_scalar_examples():
    k = KernelParams.create("gaussian", [1.0], 1.0)
    assert kernel_eval(k, [0.0], [1.0]) == pytest.approx(np.exp(-1.0), rel=1e-15)
    k = KernelParams.create("gaussian", [0.5, 0.1], 2.0)
    # 0.5*1 + 0.1*4 = 0.9
    assert kernel_eval(k, [1.0, 2.0], [0.0, 0.0]) == pytest.approx(2 * np.exp(-0.9), rel=1e-14)
    assert kernel_eval(k, [1.0, 2.0], [0.0, 0.0]) == pytest.approx(0.8131, abs=1e-4)


def test_matern12_at_unit_distance():
    k = KernelParams.create("matern12", [1.0], 1.0)
    assert kernel_eval(k, [0.0], [1.0]) == pytest.approx(np.exp(-1.0), rel=1e-14)


@pytest.mark.parametrize("family", ALL_FAMILIES)
def test_matern_closed_forms(family, rng):
    k = KernelParams.create(family, rng.uniform(0.2, 3.0, 3), 1.7)
    X, X2 = rng.standard_normal((5, 3)), rng.standard_normal((4, 3))
    r = np.sqrt(((X[:, None, :] - X2[None]) ** 2 * k.beta).sum(-1))
    np.testing.assert_allclose(gram(k, X, X2), reference_kernel(family, r, 1.7), rtol=1e-12)


def test_matern12_is_exponential_over_range():
    k = KernelParams.create("matern12", [1.0], 1.0)
    r = np.linspace(0.0, 10.0, 201)
    np.testing.assert_allclose(gram(k, r[:, None], np.zeros((1, 1)))[:, 0], np.exp(-r), rtol=1e-12, atol=0)


def test_dimension_mismatch():
    k = KernelParams.create("gaussian", [1.0, 1.0])
    with pytest.raises(DimensionMismatch):
        kernel_eval(k, [1.0], [1.0])
    with pytest.raises(DimensionMismatch):
        gram(k, np.ones((3, 3)))


def test_gram_diagonal_and_decay(rng):
    k = KernelParams.create("gaussian", [2.0, 0.5], 1.3)
    X = rng.standard_normal((6, 2))
    C = gram(k, X)
    np.testing.assert_allclose(np.diag(C), 1.3)
    np.testing.assert_array_equal(C, C.T)
    far = gram(KernelParams.create("gaussian", [1.0], 1.0), np.array([[0.0], [8.0]]))
    assert far[0, 1] < 2e-22


def test_gram_three_point_grid():
    k = KernelParams.create("gaussian", [1.0], 1.0)
    C = gram(k, np.array([[0.0], [0.5], [1.0]]))
    a, b = np.exp(-0.25), np.exp(-1.0)
    np.testing.assert_allclose(C, [[1, a, b], [a, 1, a], [b, a, 1]], rtol=1e-15)


def test_separable_kernel_pins_output_variance():
    with pytest.raises(ValueError):
        SeparableKernelParams(KernelParams.create("gaussian", [1.0]), KernelParams.create("gaussian", [1.0], 2.0))


def test_y_derivs_at_coincident_point():
    k = KernelParams.create("gaussian", [3.0, 0.5], 1.0)
    Y = np.array([[0.2, 0.4], [0.7, 0.1]])
    value, grad, hess = kernel_y_derivs(k, Y[:1], Y)
    assert np.all(grad[:, 0, 0] == 0.0)
    np.testing.assert_allclose(hess[:, 0, 0], -2.0 * k.beta)
    assert value[0, 0] == 1.0


def test_y_derivs_match_finite_differences(rng):
    k = KernelParams.create("gaussian", [4.0, 1.5], 1.0)
    Y = rng.uniform(0, 1, (5, 2))
    ys = rng.uniform(0, 1, (1, 2))
    _, grad, hess = kernel_y_derivs(k, ys, Y)
    h = 1e-5
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        up, dn, mid = gram(k, ys + e, Y), gram(k, ys - e, Y), gram(k, ys, Y)
        np.testing.assert_allclose(grad[i], (up - dn) / (2 * h), rtol=1e-6, atol=1e-10)
        h2 = 1e-4
        e[i] = h2
        up, dn = gram(k, ys + e, Y), gram(k, ys - e, Y)
        np.testing.assert_allclose(hess[i], (up - 2 * mid + dn) / h2**2, rtol=1e-5, atol=1e-6)


def test_y_derivs_reject_matern():
    with pytest.raises(UnsupportedFamily):
        kernel_y_derivs(KernelParams.create("matern52", [1.0]), [[0.0]], [[1.0]])


@pytest.mark.parametrize("family", ALL_FAMILIES)
def test_hyperparam_derivs_match_finite_differences(family, rng):
    X = rng.standard_normal((4, 2))
    k = KernelParams.create(family, [0.8, 1.6], 1.4)
    dbeta, dsig = kernel_hyperparam_derivs(k, X)
    np.testing.assert_array_equal(dsig, gram(k, X))
    h = 1e-5
    for i in range(2):
        np.testing.assert_array_equal(np.diag(dbeta[i]), 0.0)
        lb_up, lb_dn = k.log_beta.copy(), k.log_beta.copy()
        lb_up[i] += h
        lb_dn[i] -= h
        fd = (gram(k.replace(log_beta=lb_up), X) - gram(k.replace(log_beta=lb_dn), X)) / (2 * h)
        np.testing.assert_allclose(dbeta[i], fd, rtol=1e-6, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), family=st.sampled_from(ALL_FAMILIES), shift=st.floats(-50, 50))
def test_stationarity(seed, family, shift):
    rng = np.random.default_rng(seed)
    k = KernelParams.create(family, rng.uniform(0.1, 2, 2), 1.0)
    x, x2 = rng.standard_normal(2), rng.standard_normal(2)
    exact = kernel_eval(k, x, x2)
    shifted = kernel_eval(k, x + shift, x2 + shift)
    # shifting changes rounding in the differences only
    assert shifted == pytest.approx(exact, rel=1e-12, abs=1e-14)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), n=st.integers(2, 60),
       family=st.sampled_from(ALL_FAMILIES))
def test_distinct_point_grams_factor_with_small_jitter(seed, n, family):
    rng = np.random.default_rng(seed)
    X = rng.uniform(0, 1, (n, 2))
    k = KernelParams.create(family, rng.uniform(0.5, 20.0, 2), 1.0)
    C = gram(k, X)
    F = linalg.cholesky_with_jitter(C)
    assert F.jitter_used <= 1e-6 * np.trace(C) / n


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), s=st.sampled_from([0.5, 2.0, 4.0]))
def test_gaussian_input_scaling_and_beta_scaling_agree(seed, s):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((5, 3))
    beta = 0.7
    C_scaled = gram(KernelParams.create("gaussian", beta, 1.0, dim=3), s * X)
    C_beta = gram(KernelParams.create("gaussian", beta * s * s, 1.0, dim=3), X)
    np.testing.assert_allclose(C_scaled, C_beta, rtol=1e-12)
