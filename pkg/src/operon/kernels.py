"""
Stationary covariance functions with per-dimension (ARD) length-scales.

A kernel is described by :class:`KernelParams`. All scale parameters are
stored as logarithms so that unconstrained optimisation keeps them positive::

    c(x, x') = sigma2 * k(s),     s = sum_i beta_i (x_i - x'_i)^2

with ``k(s) = exp(-s)`` for the Gaussian family and the closed-form Matern
profiles of ``r = sqrt(s)`` for smoothness 1/2, 3/2 and 5/2.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, UnsupportedFamily


class KernelFamily(str, enum.Enum):
    GAUSSIAN = "gaussian"
    MATERN12 = "matern12"
    MATERN32 = "matern32"
    MATERN52 = "matern52"


@dataclass(frozen=True)
class KernelParams:
    family: KernelFamily
    log_beta: np.ndarray
    log_sigma2: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "family", KernelFamily(self.family))
        lb = np.atleast_1d(np.asarray(self.log_beta, dtype=float)).copy()
        lb.setflags(write=False)
        object.__setattr__(self, "log_beta", lb)
        object.__setattr__(self, "log_sigma2", float(self.log_sigma2))

    @classmethod
    def create(cls, family, beta, sigma2=1.0, dim=None):
        """Build from positive values; a scalar ``beta`` is broadcast to ``dim`` entries."""
        beta = np.atleast_1d(np.asarray(beta, dtype=float))
        if dim is not None and beta.size == 1:
            beta = np.full(dim, beta[0])
        return cls(family, np.log(beta), float(np.log(sigma2)))

    @property
    def beta(self):
        return np.exp(self.log_beta)

    @property
    def sigma2(self):
        return float(np.exp(self.log_sigma2))

    @property
    def dim(self):
        return self.log_beta.size

    def replace(self, **kw):
        d = dict(family=self.family, log_beta=self.log_beta, log_sigma2=self.log_sigma2)
        d.update(kw)
        return KernelParams(**d)


@dataclass(frozen=True)
class SeparableKernelParams:
    """Product kernel ``c_phi(u, u') * c_y(y, y')``; the output variance is pinned to one."""

    input: KernelParams
    output: KernelParams = field(default=None)

    def __post_init__(self):
        if self.output is None:
            raise ValueError("output kernel is required")
        if self.output.log_sigma2 != 0.0:
            raise ValueError("output kernel variance must be exactly 1 (log_sigma2 == 0)")


def beta_from_correlation(correlation, sq_distance):
    """Length-scale giving ``exp(-beta * d2) == correlation`` at squared distance ``d2``."""
    correlation = np.asarray(correlation, dtype=float)
    return -np.log(correlation) / np.asarray(sq_distance, dtype=float)


def _profile(family, s):
    """Kernel profile ``k(s)`` of the scaled squared distance."""
    if family is KernelFamily.GAUSSIAN:
        return np.exp(-s)
    r = np.sqrt(s)
    if family is KernelFamily.MATERN12:
        return np.exp(-r)
    if family is KernelFamily.MATERN32:
        a = np.sqrt(3.0) * r
        return (1.0 + a) * np.exp(-a)
    if family is KernelFamily.MATERN52:
        a = np.sqrt(5.0) * r
        return (1.0 + a + a * a / 3.0) * np.exp(-a)
    raise UnsupportedFamily(family)


def _profile_slope(family, s):
    """``dk/ds``; zero where ``s == 0`` for Matern 1/2 (the distance factor vanishes there too)."""
    if family is KernelFamily.GAUSSIAN:
        return -np.exp(-s)
    r = np.sqrt(s)
    if family is KernelFamily.MATERN12:
        with np.errstate(divide="ignore", invalid="ignore"):
            out = -np.exp(-r) / (2.0 * r)
        return np.where(s > 0, out, 0.0)
    if family is KernelFamily.MATERN32:
        return -1.5 * np.exp(-np.sqrt(3.0) * r)
    if family is KernelFamily.MATERN52:
        a = np.sqrt(5.0) * r
        return -(5.0 / 6.0) * (1.0 + a) * np.exp(-a)
    raise UnsupportedFamily(family)


def _as_points(X, dim):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None] if dim == 1 else X[None, :]
    if X.ndim != 2 or X.shape[1] != dim:
        raise DimensionMismatch(f"points have shape {X.shape}, kernel expects {dim} features")
    return X


def scaled_sqdist(X, X2, beta, same=False):
    """Matrix of ``sum_i beta_i (x_ai - x2_bi)^2``, computed through inner products.

    For ``same=True`` the result is exactly symmetric with a zero diagonal;
    entries are clipped at zero.
    """
    sb = np.sqrt(beta)
    A = X * sb
    B = A if same else X2 * sb
    s = A @ B.T
    s *= -2.0
    s += np.einsum("ij,ij->i", A, A)[:, None]
    s += np.einsum("ij,ij->i", B, B)[None, :]
    np.maximum(s, 0.0, out=s)
    if same:
        # gemm does not return an exactly symmetric product
        s = s + s.T
        s *= 0.5
        np.fill_diagonal(s, 0.0)
    return s


def kernel_eval(k: KernelParams, x, x2) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    if x.shape != (k.dim,) or x2.shape != (k.dim,):
        raise DimensionMismatch(f"kernel has {k.dim} features, got {x.shape} and {x2.shape}")
    d = x - x2
    s = float(np.sum(k.beta * d * d))
    return k.sigma2 * float(_profile(k.family, s))


def gram(k: KernelParams, X, X2=None):
    """Cross-covariance matrix ``[c(X_a, X2_b)]``; pass ``X2=None`` for the symmetric Gram."""
    X = _as_points(X, k.dim)
    same = X2 is None or X2 is X
    X2 = X if same else _as_points(X2, k.dim)
    s = scaled_sqdist(X, X2, k.beta, same=same)
    return k.sigma2 * _profile(k.family, s)


def kernel_y_derivs(k: KernelParams, y_star, Y):
    """Gaussian-kernel values and coordinate derivatives of ``c(y*, Y_j)``.

    Returns ``(value, grad, hess_diag)`` with shapes ``(m, q)``, ``(d, m, q)``
    and ``(d, m, q)``: first and pure second derivatives with respect to each
    coordinate of the query points ``y*``.
    """
    if k.family is not KernelFamily.GAUSSIAN:
        raise UnsupportedFamily("coordinate derivatives are only available for the Gaussian family")
    y_star = _as_points(y_star, k.dim)
    Y = _as_points(Y, k.dim)
    value = gram(k, y_star, Y)
    diff = y_star.T[:, :, None] - Y.T[:, None, :]
    beta = k.beta[:, None, None]
    grad = -2.0 * beta * diff * value
    hess = (-2.0 * beta + 4.0 * beta**2 * diff**2) * value
    return value, grad, hess


def kernel_hyperparam_derivs(k: KernelParams, X):
    """Derivatives of the Gram matrix of ``X`` with respect to the log-parameters.

    Returns ``(dC_dlog_beta, dC_dlog_sigma2)``; the first is a list with one
    ``n x n`` matrix per feature. Memory is ``O(dim n^2)``; training uses
    :func:`ard_contraction` instead.
    """
    X = _as_points(X, k.dim)
    beta = k.beta
    s = scaled_sqdist(X, X, beta, same=True)
    C = k.sigma2 * _profile(k.family, s)
    slope = k.sigma2 * _profile_slope(k.family, s)
    dbeta = []
    for i in range(k.dim):
        Di = (X[:, i][:, None] - X[:, i][None, :]) ** 2
        dbeta.append(slope * beta[i] * Di)
    return dbeta, C


def gram_and_slope(k: KernelParams, X):
    """Gram matrix together with ``sigma2 * dk/ds`` on the same pairs."""
    X = _as_points(X, k.dim)
    s = scaled_sqdist(X, X, k.beta, same=True)
    C = k.sigma2 * _profile(k.family, s)
    if k.family is KernelFamily.GAUSSIAN:
        return C, -C
    return C, k.sigma2 * _profile_slope(k.family, s)


def ard_contraction(G, X, beta):
    """``[sum_ab G_ab beta_i (X_ai - X_bi)^2]_i`` for symmetric ``G`` without forming distance matrices."""
    X = np.asarray(X, dtype=float)
    X = X - X.mean(axis=0)  # differences are shift invariant; centring limits cancellation
    rows = G.sum(axis=1)
    quad = np.einsum("ai,ai->i", X, G @ X)
    return beta * 2.0 * (rows @ (X * X) - quad)
