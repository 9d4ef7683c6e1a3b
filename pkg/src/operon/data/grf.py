"""Gaussian random field samples on a fixed set of points."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..linalg import cholesky_with_jitter


@dataclass(frozen=True)
class GrfConfig:
    """
    Parameters
    ----------
    length_scale, variance : float
        Squared-exponential covariance ``variance * exp(-|x - x'|^2 / (2 length_scale^2))``.
    grid : array_like, shape (p,) or (p, k)
    seed : int
    pinning : tuple of float, optional
        ``(left, right)`` values imposed at the first and last grid point of a
        1-D grid by adding a linear function to every draw.
    periodic : bool
        Use the periodic squared-exponential kernel on a unit-period 1-D grid.
    """

    length_scale: float
    variance: float
    grid: np.ndarray
    seed: int = 0
    pinning: tuple | None = None
    periodic: bool = False

    def __post_init__(self):
        if self.length_scale <= 0 or self.variance <= 0:
            raise ValueError("length_scale and variance must be positive")
        g = np.asarray(self.grid, dtype=float)
        object.__setattr__(self, "grid", g[:, None] if g.ndim == 1 else g)
        if (self.pinning is not None or self.periodic) and self.grid.shape[1] != 1:
            raise ValueError("pinning and periodicity are defined for 1-D grids only")


def grf_covariance(cfg: GrfConfig):
    X = cfg.grid
    diff = X[:, None, :] - X[None, :, :]
    if cfg.periodic:
        s = np.sin(np.pi * diff[..., 0]) ** 2
        return cfg.variance * np.exp(-2.0 * s / cfg.length_scale**2)
    d2 = np.sum(diff * diff, axis=-1)
    return cfg.variance * np.exp(-0.5 * d2 / cfg.length_scale**2)


def grf_sample(cfg: GrfConfig, count: int):
    """``count`` independent draws as rows of a ``count x p`` matrix."""
    F = cholesky_with_jitter(grf_covariance(cfg))
    z = np.random.default_rng(cfg.seed).standard_normal((count, cfg.grid.shape[0]))
    out = z @ F.lower.T
    if cfg.pinning is not None:
        left, right = cfg.pinning
        x = cfg.grid[:, 0]
        t = (x - x[0]) / (x[-1] - x[0])
        a = left - out[:, :1]
        b = right - out[:, -1:]
        out = out + a + (b - a) * t
        out[:, 0], out[:, -1] = left, right
    return out
