"""
Dense linear algebra used by the GP operator models.

Everything here works on plain ``numpy`` float64 arrays. The two Kronecker
factors of the covariance are factored independently, so the largest matrix
ever factored is ``max(N, q)`` on a side.

Vectorisation convention: a ``q x N`` matrix ``X`` is flattened column by
column (``X.ravel(order="F")``), so the output index varies fastest within a
sample and ``(A kron B) vec(X) = vec(B X A^T)``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla
from scipy.linalg import lapack

from .errors import AllocationLimit, DimensionMismatch, NotPositiveDefinite, RankDeficient

#: relative jitter levels tried in order (multiples of the mean diagonal)
DEFAULT_JITTER_LEVELS = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4)

KRON_MAX_ELEMENTS = 10**7


@dataclass(frozen=True)
class JitterPolicy:
    """Escalation schedule for :func:`cholesky_with_jitter`.

    ``levels`` are relative to ``trace(A) / n``, which keeps the schedule
    independent of the overall scale of ``A``.
    """

    levels: tuple = DEFAULT_JITTER_LEVELS

    def escalated(self) -> "JitterPolicy":
        """Drop the zero level and extend the schedule two decades further."""
        top = max(self.levels) if self.levels else 1e-4
        top = top or 1e-10
        base = tuple(lvl for lvl in self.levels if lvl > 0) or (top,)
        return JitterPolicy(base + (10 * top, 100 * top))


ZERO_JITTER = JitterPolicy((0.0,))


@dataclass(frozen=True)
class CholeskyFactor:
    lower: np.ndarray
    jitter_used: float = 0.0
    level: int = 0  # index into the jitter schedule that succeeded

    @property
    def n(self) -> int:
        return self.lower.shape[0]


@dataclass(frozen=True)
class PcaBasis:
    mean_vector: np.ndarray
    components: np.ndarray

    @property
    def r(self) -> int:
        return self.components.shape[0]

    def transform(self, X):
        X = np.asarray(X, dtype=float)
        return (X - self.mean_vector) @ self.components.T

    def inverse_transform(self, Z):
        return np.asarray(Z, dtype=float) @ self.components + self.mean_vector


def _check_square(A):
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {A.shape}")
    return A


def cholesky_with_jitter(A, policy: JitterPolicy | None = None, start: int = 0,
                         check_symmetric: bool = True) -> CholeskyFactor:
    """Lower Cholesky factor of ``A + j I`` for the smallest jitter ``j`` in the schedule that works.

    Only the lower triangle of ``A`` is read. ``start`` skips the first levels
    of the schedule (training loops pass the last successful level so the
    jitter never decreases mid-run).

    Raises
    ------
    NotPositiveDefinite
        If every level of the schedule fails.
    """
    A = _check_square(A)
    policy = policy or JitterPolicy()
    n = A.shape[0]
    scale = np.abs(A).max() if n and check_symmetric else 0.0
    if check_symmetric and n and np.abs(A - A.T).max() > 1e-9 * max(scale, 1e-300):
        raise DimensionMismatch("matrix is not symmetric to 1e-9 relative")
    if n == 0:
        return CholeskyFactor(np.zeros((0, 0)), 0.0)
    mean_diag = np.trace(A) / n
    for idx in range(min(start, len(policy.levels) - 1), len(policy.levels)):
        jitter = float(policy.levels[idx] * mean_diag)
        M = A + jitter * np.eye(n) if jitter else A
        L, info = lapack.dpotrf(M, lower=1, clean=1, overwrite_a=0)
        if info == 0 and np.all(np.diag(L) > 0):
            return CholeskyFactor(L, jitter, idx)
    raise NotPositiveDefinite(
        f"Cholesky failed for all jitter levels up to {max(policy.levels):g} x mean diagonal (n={n})"
    )


def chol_solve(F: CholeskyFactor, B):
    """Solve ``(A + jitter I) X = B`` given the factor of ``A``."""
    B = np.asarray(B, dtype=float)
    if B.shape[0] != F.n:
        raise DimensionMismatch(f"factor is {F.n}x{F.n} but right-hand side has {B.shape[0]} rows")
    return sla.cho_solve((F.lower, True), B, check_finite=False)


def chol_solve_right(F: CholeskyFactor, B):
    """``B (A + jitter I)^{-1}``; ``B`` has ``F.n`` columns."""
    B = np.asarray(B, dtype=float)
    if B.shape[-1] != F.n:
        raise DimensionMismatch(f"factor is {F.n}x{F.n} but left operand has {B.shape[-1]} columns")
    return chol_solve(F, B.T).T


def chol_inverse(F: CholeskyFactor):
    """Explicit symmetric inverse from the factor (LAPACK ``potri``)."""
    inv, info = lapack.dpotri(F.lower, lower=1)
    if info != 0:
        raise NotPositiveDefinite(f"potri failed with info={info}")
    inv = np.tril(inv)
    out = inv + inv.T
    out[np.diag_indices_from(out)] *= 0.5
    return out


def log_det(F: CholeskyFactor) -> float:
    return float(2.0 * np.sum(np.log(np.diag(F.lower))))


def kron_dense(A, B, max_elements: int = KRON_MAX_ELEMENTS):
    """Materialised Kronecker product. Only meant as a test oracle."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.size == 0 or B.size == 0:
        raise DimensionMismatch("kron_dense needs nonempty operands")
    total = A.size * B.size
    if total > max_elements:
        raise AllocationLimit(f"Kronecker product would have {total} elements (limit {max_elements})")
    return np.kron(A, B)


def vec(X):
    """Column-stacking vectorisation of a ``q x N`` matrix."""
    return np.asarray(X).ravel(order="F")


def unvec(v, q: int, N: int):
    return np.asarray(v).reshape((q, N), order="F")


def pca_fit(X, r: int) -> PcaBasis:
    """Top-``r`` principal directions of the rows of ``X`` via SVD of the centred matrix.

    Each component is sign-fixed so that its largest-magnitude entry is positive.
    If ``r`` exceeds the numerical rank a :class:`RankDeficient` warning is issued
    and ``r`` is reduced (never below one).
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise DimensionMismatch("pca_fit expects an N x p matrix")
    N, p = X.shape
    if not 1 <= r <= min(N, p):
        raise DimensionMismatch(f"r={r} must lie in [1, min(N, p)={min(N, p)}]")
    mu = X.mean(axis=0)
    _, s, Vt = np.linalg.svd(X - mu, full_matrices=False)
    tol = s[0] * max(N, p) * np.finfo(float).eps if s.size and s[0] > 0 else 0.0
    rank = int(np.sum(s > tol))
    if r > rank:
        warnings.warn(f"requested {r} components but numerical rank is {rank}", RankDeficient, stacklevel=2)
        r = max(rank, 1)
    comps = Vt[:r].copy()
    idx = np.argmax(np.abs(comps), axis=1)
    signs = np.sign(comps[np.arange(r), idx])
    signs[signs == 0] = 1.0
    comps *= signs[:, None]
    return PcaBasis(mu, comps)
