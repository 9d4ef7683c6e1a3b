"""
Gaussian-process operator model with a separable covariance.

For ``N`` training pairs with inputs ``U`` (``N x p`` features) and outputs
observed on a shared grid ``Y`` (``q x d``), the covariance of the stacked
outputs factors as ``C = C_phi kron C_y``. Everything below works with the two
factors only; :func:`nll_dense_oracle` is the one place that assembles ``C``
and exists to cross-check the fast path.

Outputs are stored as ``V`` with shape ``(S, q, N)``: one ``q x N`` matrix per
response, columns are samples.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .errors import AllocationLimit, DimensionMismatch
from .kernels import KernelParams, SeparableKernelParams, gram
from .linalg import CholeskyFactor, JitterPolicy, PcaBasis
from .means import MeanArchitecture, MeanFunction, mean_eval, zero_mean

MODEL_MAGIC = b"OPGP"
MODEL_VERSION = 1
DENSE_ORACLE_CAP = 2000


@dataclass(frozen=True)
class LossValue:
    """``total = 0.5 * logdet_term + 0.5 * quad_term``."""

    total: float
    logdet_term: float
    quad_term: float

    @classmethod
    def from_terms(cls, logdet_term, quad_term):
        return cls(0.5 * logdet_term + 0.5 * quad_term, float(logdet_term), float(quad_term))


@dataclass(frozen=True)
class InputTransform:
    """Feature map applied to raw discretised inputs: optional PCA projection, then a global scale."""

    pca: PcaBasis | None = None
    scale: float = 1.0

    def apply(self, U):
        U = np.atleast_2d(np.asarray(U, dtype=float))
        if self.pca is not None:
            U = self.pca.transform(U)
        return U * self.scale if self.scale != 1.0 else U

    @property
    def is_identity(self):
        return self.pca is None and self.scale == 1.0


IDENTITY_TRANSFORM = InputTransform()


def _outputs(V):
    V = np.asarray(V, dtype=float)
    if V.ndim == 2:
        V = V[None]
    if V.ndim != 3:
        raise DimensionMismatch(f"outputs must have shape (S, q, N), got {V.shape}")
    return V


def _check_shapes(U, Y, V):
    U = np.atleast_2d(np.asarray(U, dtype=float))
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    V = _outputs(V)
    if V.shape[1:] != (Y.shape[0], U.shape[0]):
        raise DimensionMismatch(
            f"outputs {V.shape} do not match {Y.shape[0]} grid points and {U.shape[0]} samples"
        )
    return U, Y, V


def _mean_for(mean, U, Y, S):
    if mean is None:
        return np.zeros((S, Y.shape[0], U.shape[0]))
    M = mean_eval(mean, U, Y)
    if M.shape[0] != S:
        raise DimensionMismatch(f"mean has {M.shape[0]} outputs, data has {S}")
    return M


def factor_grams(kernel: SeparableKernelParams, U, Y, policy: JitterPolicy | None = None):
    """Cholesky factors of the input and output Gram matrices."""
    F_phi = linalg.cholesky_with_jitter(gram(kernel.input, U), policy)
    F_y = linalg.cholesky_with_jitter(gram(kernel.output, Y), policy)
    return F_phi, F_y


def residual_weights(F_phi: CholeskyFactor, F_y: CholeskyFactor, R):
    """``W_s = C_y^{-1} R_s C_phi^{-1}`` for every response ``s``."""
    R = _outputs(R)
    return np.stack([linalg.chol_solve_right(F_phi, linalg.chol_solve(F_y, Rs)) for Rs in R])


def nll_dense_oracle(dataset, kernel: SeparableKernelParams, mean=None, cap: int = DENSE_ORACLE_CAP) -> LossValue:
    """Reference negative log-likelihood from the assembled ``Nq x Nq`` covariance (single output)."""
    U, Y, V = _check_shapes(dataset.U, dataset.Y, dataset.V)
    if V.shape[0] != 1:
        raise DimensionMismatch("the dense oracle handles a single output")
    N, q = U.shape[0], Y.shape[0]
    if N * q > cap:
        raise AllocationLimit(f"Nq={N * q} exceeds the dense oracle cap {cap}")
    C = linalg.kron_dense(gram(kernel.input, U), gram(kernel.output, Y))
    r = linalg.vec(V[0] - _mean_for(mean, U, Y, 1)[0])
    F = linalg.cholesky_with_jitter(C, linalg.ZERO_JITTER)
    quad = float(r @ linalg.chol_solve(F, r))
    return LossValue.from_terms(linalg.log_det(F), quad)


def nll_kron(dataset, kernel: SeparableKernelParams, mean=None, policy: JitterPolicy | None = None,
             factors=None) -> LossValue:
    """Negative log-likelihood through the Kronecker factors; ``O(N^3 + q^3 + S N q (N + q))``.

    ``factors`` may carry precomputed ``(F_phi, F_y)``.
    """
    U, Y, V = _check_shapes(dataset.U, dataset.Y, dataset.V)
    S, q, N = V.shape
    F_phi, F_y = factors if factors is not None else factor_grams(kernel, U, Y, policy)
    R = V - _mean_for(mean, U, Y, S)
    W = residual_weights(F_phi, F_y, R)
    logdet = S * (q * linalg.log_det(F_phi) + N * linalg.log_det(F_y))
    return LossValue.from_terms(logdet, float(np.sum(R * W)))


def loss_nn_mle(dataset, chol_phi: CholeskyFactor, chol_y: CholeskyFactor, mean=None, with_grad: bool = False):
    """Data-fit term ``sum_s vec(R_s)^T vec(C_y^{-1} R_s C_phi^{-1})`` with frozen kernel factors.

    With ``with_grad`` returns ``(loss, dL_dM, W)`` where ``dL_dM = -2 W``.
    """
    U, Y, V = _check_shapes(dataset.U, dataset.Y, dataset.V)
    if (chol_phi.n, chol_y.n) != (U.shape[0], Y.shape[0]):
        raise DimensionMismatch("kernel factors do not match the dataset")
    R = V - _mean_for(mean, U, Y, V.shape[0])
    W = residual_weights(chol_phi, chol_y, R)
    loss = float(np.sum(R * W))
    if with_grad:
        return loss, -2.0 * W, W
    return loss


def identity_factor(n):
    """Cholesky factor of the identity, used for the plain squared-error loss."""
    return CholeskyFactor(np.eye(n), 0.0)


@dataclass(frozen=True)
class TrainedOperatorGP:
    """Fitted model; holds the training data, both kernel factors and the residual weights ``W``."""

    U: np.ndarray
    Y: np.ndarray
    V: np.ndarray
    kernel: SeparableKernelParams
    mean: MeanFunction
    chol_phi: CholeskyFactor
    chol_y: CholeskyFactor
    W: np.ndarray
    transform: InputTransform = field(default=IDENTITY_TRANSFORM)

    @property
    def N(self):
        return self.U.shape[0]

    @property
    def p(self):
        return self.U.shape[1]

    @property
    def q(self):
        return self.Y.shape[0]

    @property
    def d(self):
        return self.Y.shape[1]

    @property
    def S(self):
        return self.V.shape[0]

    @property
    def jitter_used(self):
        return {"phi": self.chol_phi.jitter_used, "y": self.chol_y.jitter_used}

    @property
    def n_kernel_params(self):
        return self.kernel.input.dim + 1


def fit(dataset, kernel: SeparableKernelParams, mean: MeanFunction | None = None,
        policy: JitterPolicy | None = None, transform: InputTransform = IDENTITY_TRANSFORM,
        factors=None) -> TrainedOperatorGP:
    """Factor both Gram matrices and store ``W_s = C_y^{-1}(V_s - M_s) C_phi^{-1}``.

    ``dataset.U`` must already be in feature space; ``transform`` is recorded so
    that :func:`predict` can map raw inputs the same way.
    """
    U, Y, V = _check_shapes(dataset.U, dataset.Y, dataset.V)
    S = V.shape[0]
    if mean is None:
        mean = zero_mean(U.shape[1], Y.shape[1], S)
    F_phi, F_y = factors if factors is not None else factor_grams(kernel, U, Y, policy)
    W = residual_weights(F_phi, F_y, V - _mean_for(mean, U, Y, S))
    return TrainedOperatorGP(U, Y, V, kernel, mean, F_phi, F_y, W, transform)


def _query_points(Y_star, d):
    Y_star = np.asarray(Y_star, dtype=float)
    if Y_star.ndim == 1:
        Y_star = Y_star[:, None] if d == 1 else Y_star[None, :]
    if Y_star.shape[1] != d:
        raise DimensionMismatch(f"query points have {Y_star.shape[1]} coordinates, model uses {d}")
    return Y_star


def predict(model: TrainedOperatorGP, u_star, Y_star=None, features: bool = False):
    """Posterior mean at query points.

    Parameters
    ----------
    u_star : array_like
        One raw input (length ``p_raw``) or a batch ``(n, p_raw)``. With
        ``features=True`` the values are taken as already transformed.
    Y_star : array_like, optional
        ``m x d`` query points; defaults to the training grid.

    Returns
    -------
    ndarray
        ``(m, S)`` for a single input, ``(n, m, S)`` for a batch.
    """
    u = np.asarray(u_star, dtype=float)
    single = u.ndim == 1
    u = np.atleast_2d(u)
    phi = u if features else model.transform.apply(u)
    if phi.shape[1] != model.p:
        raise DimensionMismatch(f"input maps to {phi.shape[1]} features, model expects {model.p}")
    Ys = model.Y if Y_star is None else _query_points(Y_star, model.d)
    k_phi = gram(model.kernel.input, model.U, phi)  # N x n
    k_y = gram(model.kernel.output, Ys, model.Y)  # m x q
    eta = mean_eval(model.mean, phi, Ys)  # S x m x n
    for s in range(model.S):
        eta[s] += k_y @ (model.W[s] @ k_phi)
    out = eta.transpose(2, 1, 0)
    return out[0] if single else out


def optimal_recovery_predict(dataset, c_lambda: KernelParams, c_nu: KernelParams, u_star, Y_star=None,
                             policy: JitterPolicy | None = None):
    """Optimal-recovery predictor with a diagonal operator kernel: ``c_nu(Y*,Y) C_nu^-1 V C_lambda^-1 c_lambda(U,u*)``.

    Single output only. The input-side system is solved first and the output
    side applied last, which is the reverse of :func:`predict`.
    """
    U, Y, V = _check_shapes(dataset.U, dataset.Y, dataset.V)
    if V.shape[0] != 1:
        raise DimensionMismatch("optimal recovery baseline handles a single output")
    u = np.asarray(u_star, dtype=float)
    single = u.ndim == 1
    u = np.atleast_2d(u)
    Ys = Y if Y_star is None else _query_points(Y_star, Y.shape[1])
    F_lam = linalg.cholesky_with_jitter(gram(c_lambda, U), policy)
    F_nu = linalg.cholesky_with_jitter(gram(c_nu, Y), policy)
    alpha = linalg.chol_solve(F_lam, gram(c_lambda, U, u))  # N x n
    beta = linalg.chol_solve(F_nu, V[0] @ alpha)  # q x n
    out = (gram(c_nu, Ys, Y) @ beta).T  # n x m
    return out[0] if single else out


def save_model(path, model: TrainedOperatorGP, metadata: dict | None = None):
    from .data.container import write_container

    k = model.kernel
    arrays = {
        "U": model.U, "Y": model.Y, "V": model.V, "W": model.W, "theta": model.mean.theta,
        "log_beta_phi": k.input.log_beta, "log_beta_y": k.output.log_beta,
        "chol_phi": model.chol_phi.lower, "chol_y": model.chol_y.lower,
    }
    pca = model.transform.pca
    if pca is not None:
        arrays["pca_mean"] = pca.mean_vector
        arrays["pca_components"] = pca.components
    manifest = {
        "version": MODEL_VERSION,
        "N": model.N, "p": model.p, "q": model.q, "d": model.d, "S": model.S,
        "kernel": {
            "input_family": k.input.family.value, "output_family": k.output.family.value,
            "log_sigma2_phi": k.input.log_sigma2,
        },
        "mean": model.mean.arch.to_dict(),
        "jitter_used": model.jitter_used,
        "pca": None if pca is None else {"r": pca.r},
        "input_scale": model.transform.scale,
        "user": metadata or {},
    }
    write_container(path, arrays, manifest, magic=MODEL_MAGIC, version=MODEL_VERSION)


def load_model(path) -> TrainedOperatorGP:
    from .data.container import read_container

    arrays, meta = read_container(path, magic=MODEL_MAGIC, supported_versions=(MODEL_VERSION,))
    kmeta = meta["kernel"]
    kernel = SeparableKernelParams(
        KernelParams(kmeta["input_family"], arrays["log_beta_phi"], kmeta["log_sigma2_phi"]),
        KernelParams(kmeta["output_family"], arrays["log_beta_y"], 0.0),
    )
    mean = MeanFunction(MeanArchitecture.from_dict(meta["mean"]), arrays["theta"])
    pca = None
    if meta.get("pca"):
        pca = PcaBasis(arrays["pca_mean"], arrays["pca_components"])
    jit = meta["jitter_used"]
    return TrainedOperatorGP(
        arrays["U"], arrays["Y"], arrays["V"], kernel, mean,
        CholeskyFactor(arrays["chol_phi"], jit["phi"]), CholeskyFactor(arrays["chol_y"], jit["y"]),
        arrays["W"], InputTransform(pca, meta.get("input_scale", 1.0)),
    )
