import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from operon import linalg
from operon.data import OperatorDataset
from operon.errors import AllocationLimit, DimensionMismatch
from operon.kernels import KernelFamily, KernelParams, SeparableKernelParams, gram
from operon.means import MeanArchitecture, mean_eval, mean_init
from operon.model import (
    LossValue,
    fit,
    identity_factor,
    load_model,
    loss_nn_mle,
    nll_dense_oracle,
    nll_kron,
    optimal_recovery_predict,
    predict,
    save_model,
)

from conftest import random_dataset, random_kernel


def dense_posterior_mean(ds, kernel, u_star, Y_star, mean=None):
    """Textbook GP conditional mean with the full covariance assembled explicitly."""
    C = np.kron(gram(kernel.input, ds.U), gram(kernel.output, ds.Y))
    cross = np.kron(gram(kernel.input, u_star[None], ds.U), gram(kernel.output, Y_star, ds.Y))
    m_train = np.zeros(ds.N * ds.q) if mean is None else mean_eval(mean, ds.U, ds.Y)[0].ravel(order="F")
    m_star = np.zeros(len(Y_star)) if mean is None else mean_eval(mean, u_star[None], Y_star)[0][:, 0]
    r = ds.V[0].ravel(order="F") - m_train
    return m_star + cross @ np.linalg.solve(C, r)


def gaussian_pair(beta_phi, sigma2, beta_y, p, d):
    return SeparableKernelParams(KernelParams.create("gaussian", beta_phi, sigma2, dim=p),
                                 KernelParams.create("gaussian", beta_y, 1.0, dim=d))


def test_loss_value_halves_terms():
    lv = LossValue.from_terms(3.0, 5.0)
    assert lv.total == 4.0


def test_dense_oracle_identity_covariance(rng):
    ds = random_dataset(rng, N=3, q=2, p=1)
    ds = OperatorDataset(np.array([[0.0], [10.0], [20.0]]), np.array([[0.0], [10.0]]), ds.V)
    lv = nll_dense_oracle(ds, gaussian_pair(1e3, 1.0, 1e3, 1, 1))
    assert lv.logdet_term == pytest.approx(0.0, abs=1e-12)
    assert lv.quad_term == pytest.approx(np.sum(ds.V**2), rel=1e-14)


def test_dense_oracle_scalar_gaussian():
    ds = OperatorDataset(np.array([[0.3]]), np.array([[0.5]]), np.array([[[1.7]]]))
    lv = nll_dense_oracle(ds, gaussian_pair(1.0, 2.5, 1.0, 1, 1))
    assert lv.total == pytest.approx(0.5 * np.log(2.5) + 0.5 * 1.7**2 / 2.5, rel=1e-14)


@pytest.mark.parametrize("family", [KernelFamily.GAUSSIAN, KernelFamily.MATERN52, KernelFamily.MATERN12])
def test_kron_loss_matches_dense(family, rng):
    ds = random_dataset(rng, N=4, q=3, p=2)
    kernel = random_kernel(rng, 2, 1, family, family)
    mean = mean_init(MeanArchitecture.mlp(2, 1, (4,)), 0)
    for m in (None, mean):
        dense, fast = nll_dense_oracle(ds, kernel, m), nll_kron(ds, kernel, m)
        assert fast.total == pytest.approx(dense.total, rel=1e-10)
        assert fast.logdet_term == pytest.approx(dense.logdet_term, rel=1e-10, abs=1e-12)
        assert fast.quad_term == pytest.approx(dense.quad_term, rel=1e-10)


def test_dense_oracle_limits(rng):
    ds = random_dataset(rng, N=50, q=50, p=1)
    with pytest.raises(AllocationLimit):
        nll_dense_oracle(ds, random_kernel(rng, 1, 1))
    with pytest.raises(DimensionMismatch):
        nll_dense_oracle(random_dataset(rng, S=2), random_kernel(rng, 2, 1))


def test_kron_loss_zero_outputs_and_duplicated_outputs(rng):
    ds = random_dataset(rng, N=4, q=3, p=2)
    kernel = random_kernel(rng, 2, 1)
    zero = OperatorDataset(ds.U, ds.Y, np.zeros_like(ds.V))
    assert nll_kron(zero, kernel).quad_term == 0.0
    double = OperatorDataset(ds.U, ds.Y, np.concatenate([ds.V, ds.V]))
    single, pair = nll_kron(ds, kernel), nll_kron(double, kernel)
    assert pair.quad_term == pytest.approx(2 * single.quad_term, rel=1e-14)
    assert pair.logdet_term == pytest.approx(2 * single.logdet_term, rel=1e-14)


def test_nn_loss_with_identity_grams_is_squared_error(rng):
    ds = random_dataset(rng, N=5, q=4, p=2, S=2)
    mean = mean_init(MeanArchitecture.mlp(2, 1, (3,), outputs=2), 1)
    loss = loss_nn_mle(ds, identity_factor(5), identity_factor(4), mean)
    expected = np.sum((ds.V - mean_eval(mean, ds.U, ds.Y)) ** 2)
    assert abs(loss - expected) <= 1e-12 * expected


def test_nn_loss_zero_when_mean_reproduces_data(rng):
    U, Y = rng.standard_normal((4, 2)), rng.uniform(size=(3, 1))
    mean = mean_init(MeanArchitecture.mlp(2, 1, (3,)), 2)
    ds = OperatorDataset(U, Y, mean_eval(mean, U, Y))
    F_phi, F_y = linalg.cholesky_with_jitter(gram(KernelParams.create("gaussian", 1.0, dim=2), U)), identity_factor(3)
    assert loss_nn_mle(ds, F_phi, F_y, mean) == 0.0


def test_nn_loss_matches_kron_quad_term_and_gradient(rng):
    ds = random_dataset(rng, N=4, q=3, p=2)
    kernel = random_kernel(rng, 2, 1)
    mean = mean_init(MeanArchitecture.branch_trunk(2, 1, (4,), (4,), 3), 0)
    model = fit(ds, kernel, mean)
    loss, dM, W = loss_nn_mle(ds, model.chol_phi, model.chol_y, mean, with_grad=True)
    assert loss == pytest.approx(nll_kron(ds, kernel, mean).quad_term, rel=1e-12)
    np.testing.assert_array_equal(dM, -2.0 * W)
    # finite differences in the mean entries: L(M) = <V-M, C^-1 (V-M)>
    h = 1e-6
    M0 = mean_eval(mean, ds.U, ds.Y)
    fd = np.empty_like(M0)
    for idx in np.ndindex(M0.shape):
        for sign in (1, -1):
            M = M0.copy()
            M[idx] += sign * h
            R = ds.V - M
            val = np.sum(R * linalg.chol_solve_right(model.chol_phi, linalg.chol_solve(model.chol_y, R[0]))[None])
            fd[idx] = fd[idx] + sign * val / (2 * h) if sign == -1 else val / (2 * h)
    np.testing.assert_allclose(dM, fd, rtol=1e-6, atol=1e-6 * np.abs(fd).max())


def test_fit_residual_weights(rng):
    ds = random_dataset(rng, N=5, q=4, p=2)
    kernel = random_kernel(rng, 2, 1)
    model = fit(ds, kernel)
    Cphi, Cy = gram(kernel.input, ds.U), gram(kernel.output, ds.Y)
    R = Cy @ model.W[0] @ Cphi
    assert np.linalg.norm(R - ds.V[0]) <= 1e-8 * np.linalg.norm(ds.V[0])


def test_fit_zero_residual_and_scalar_case(rng):
    U, Y = rng.standard_normal((3, 2)), rng.uniform(size=(4, 1))
    mean = mean_init(MeanArchitecture.mlp(2, 1, (3,)), 0)
    model = fit(OperatorDataset(U, Y, mean_eval(mean, U, Y)), random_kernel(rng, 2, 1), mean)
    assert not model.W.any()
    one = OperatorDataset(np.array([[0.2]]), np.array([[0.4]]), np.array([[[3.0]]]))
    assert fit(one, gaussian_pair(1.0, 1.5, 5.0, 1, 1)).W[0, 0, 0] == pytest.approx(3.0 / 1.5, rel=1e-15)


def test_predict_reproduces_training_data(rng):
    ds = random_dataset(rng, N=6, q=5, p=3)
    model = fit(ds, random_kernel(rng, 3, 1), policy=linalg.ZERO_JITTER)
    pred = predict(model, ds.U)
    err = np.abs(pred - ds.targets()).max() / np.abs(ds.V).max()
    assert err < 1e-6


def test_predict_without_residuals_returns_mean(rng):
    U, Y = rng.standard_normal((3, 2)), rng.uniform(size=(4, 1))
    mean = mean_init(MeanArchitecture.mlp(2, 1, (3,)), 0)
    model = fit(OperatorDataset(U, Y, mean_eval(mean, U, Y)), random_kernel(rng, 2, 1), mean)
    us, Ys = rng.standard_normal(2), rng.uniform(size=(7, 1))
    np.testing.assert_allclose(predict(model, us, Ys)[:, 0], mean_eval(mean, us[None], Ys)[0][:, 0], rtol=1e-14)


@pytest.mark.parametrize("with_mean", [False, True])
def test_predict_matches_dense_posterior(with_mean, rng):
    ds = random_dataset(rng, N=3, q=2, p=2)
    kernel = random_kernel(rng, 2, 1)
    mean = mean_init(MeanArchitecture.mlp(2, 1, (3,)), 1) if with_mean else None
    model = fit(ds, kernel, mean)
    us, Ys = rng.standard_normal(2), rng.uniform(size=(5, 1))
    np.testing.assert_allclose(predict(model, us, Ys)[:, 0], dense_posterior_mean(ds, kernel, us, Ys, mean),
                               rtol=1e-9, atol=1e-12)


def test_predict_shapes_and_errors(rng):
    ds = random_dataset(rng, N=4, q=3, p=2, S=2)
    model = fit(ds, random_kernel(rng, 2, 1))
    assert predict(model, ds.U[0]).shape == (3, 2)
    assert predict(model, ds.U, np.linspace(0, 1, 7)).shape == (4, 7, 2)
    with pytest.raises(DimensionMismatch):
        predict(model, np.ones(5))
    with pytest.raises(DimensionMismatch):
        predict(model, ds.U, np.ones((2, 2)))


def test_optimal_recovery_interpolates_and_matches_predict(rng):
    ds = random_dataset(rng, N=5, q=4, p=2)
    kernel = random_kernel(rng, 2, 1)
    np.testing.assert_allclose(optimal_recovery_predict(ds, kernel.input, kernel.output, ds.U[2]), ds.V[0][:, 2],
                               rtol=1e-8, atol=1e-10)
    us, Ys = rng.standard_normal((3, 2)), rng.uniform(size=(6, 1))
    ours = predict(fit(ds, kernel), us, Ys)[..., 0]
    np.testing.assert_allclose(optimal_recovery_predict(ds, kernel.input, kernel.output, us, Ys), ours,
                               rtol=1e-8, atol=1e-10)


def test_optimal_recovery_single_sample(rng):
    ds = random_dataset(rng, N=1, q=3, p=2)
    kernel = random_kernel(rng, 2, 1)
    us = rng.standard_normal(2)
    Cnu = gram(kernel.output, ds.Y)
    factor = gram(kernel.input, ds.U, us[None])[0, 0] / gram(kernel.input, ds.U)[0, 0]
    expected = gram(kernel.output, ds.Y, ds.Y) @ np.linalg.solve(Cnu, ds.V[0][:, 0]) * factor
    np.testing.assert_allclose(optimal_recovery_predict(ds, kernel.input, kernel.output, us), expected, rtol=1e-10)


def test_model_file_round_trip_is_byte_exact(rng, tmp_path):
    ds = random_dataset(rng, N=4, q=3, p=2, S=2)
    mean = mean_init(MeanArchitecture.branch_trunk(2, 1, (4,), (4,), 3, outputs=2), 0)
    model = fit(ds, random_kernel(rng, 2, 1), mean)
    a, b = tmp_path / "a.opgp", tmp_path / "b.opgp"
    save_model(a, model, {"note": "x"})
    loaded = load_model(a)
    save_model(b, loaded, {"note": "x"})
    assert a.read_bytes() == b.read_bytes()
    np.testing.assert_array_equal(predict(loaded, ds.U), predict(model, ds.U))
    assert loaded.kernel.input.family is model.kernel.input.family


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_permuting_training_samples_leaves_predictions_unchanged(seed):
    rng = np.random.default_rng(seed)
    ds = random_dataset(rng, N=6, q=4, p=2)
    ds = OperatorDataset(ds.U, np.linspace(0, 1, 4)[:, None], ds.V)
    kernel = gaussian_pair(0.5, 1.0, 30.0, 2, 1)  # well conditioned so rounding stays at 1e-10
    perm = rng.permutation(6)
    shuffled = OperatorDataset(ds.U[perm], ds.Y, ds.V[:, :, perm])
    us = rng.standard_normal((3, 2))
    np.testing.assert_allclose(predict(fit(shuffled, kernel), us), predict(fit(ds, kernel), us), rtol=1e-10,
                               atol=1e-10)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), N=st.integers(1, 6), q=st.integers(1, 5))
def test_kron_dense_agreement_property(seed, N, q):
    rng = np.random.default_rng(seed)
    ds = random_dataset(rng, N=N, q=q, p=2, d=2)
    kernel = random_kernel(rng, 2, 2)
    assert nll_kron(ds, kernel).total == pytest.approx(nll_dense_oracle(ds, kernel).total, rel=1e-9, abs=1e-9)


def test_reproduction_with_default_jitter_on_clustered_inputs(rng):
    base = rng.standard_normal((1, 3))
    U = base + 1e-5 * rng.standard_normal((8, 3))
    Y = np.linspace(0, 1, 6)[:, None]
    ds = OperatorDataset(U, Y, np.sin(3 * Y + U[:, :1].T))
    model = fit(ds, gaussian_pair(1e-2, 1.0, 3.0, 3, 1))
    err = np.abs(predict(model, U) - ds.targets()).max() / np.abs(ds.V).max()
    assert err < 1e-4
