"""Closed-form and quadrature-based generators: periodic advection and the calculus pair."""

from __future__ import annotations

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .dataset import OperatorDataset
from .grf import GrfConfig, grf_sample


def square_wave(x, center, width, height):
    """``height`` on ``[center - width/2, center + width/2]``, zero elsewhere; rows per wave."""
    x = np.asarray(x, dtype=float)[None, :]
    c, w, h = (np.asarray(a, dtype=float)[:, None] for a in (center, width, height))
    return h * ((x >= c - w / 2) & (x <= c + w / 2))


def gen_advection(N: int, p: int, seed: int = 0, shift: float = 0.5,
                  center_range=(0.3, 0.7), width_range=(0.3, 0.6), height_range=(1.0, 2.0)) -> OperatorDataset:
    """Square-wave initial conditions transported periodically on ``[0, 1)``.

    The output is ``v(x) = u0((x - shift) mod 1)``. When ``shift * p`` is an
    integer the output is an exact cyclic shift of the input samples.
    """
    if p < 8:
        raise ValueError("advection needs p >= 8")
    rng = np.random.default_rng(seed)
    c = rng.uniform(*center_range, N)
    w = rng.uniform(*width_range, N)
    h = rng.uniform(*height_range, N)
    x = np.arange(p) / p
    U = square_wave(x, c, w, h)
    k = shift * p
    if np.isclose(k, round(k), rtol=0, atol=1e-12):
        V = np.roll(U, int(round(k)), axis=1)
    else:
        V = square_wave(np.mod(x - shift, 1.0), c, w, h)
    meta = {"name": "advection", "seed": int(seed), "N": int(N), "p": int(p), "shift": float(shift),
            "center_range": list(center_range), "width_range": list(width_range),
            "height_range": list(height_range)}
    return OperatorDataset(U, x[:, None], V.T[None], x[:, None], meta)


def calculus_pair_outputs(U, x):
    """Antiderivative and derivative of each row of ``U`` sampled at ``x``; shape ``(2, p, N)``."""
    U = np.atleast_2d(np.asarray(U, dtype=float))
    anti = cumulative_trapezoid(U, x, axis=1, initial=0.0)
    deriv = np.gradient(U, x, axis=1, edge_order=2)
    return np.stack([anti.T, deriv.T])


def gen_calculus_pair(N: int, p: int, seed: int = 0, length_scale: float = 0.2) -> OperatorDataset:
    """Two responses of one GRF input on ``[0, 1]``: its antiderivative and its derivative.

    The antiderivative is the cumulative trapezoid rule (zero at ``x = 0``); the
    derivative uses second-order central differences with second-order
    one-sided stencils at the ends.
    """
    if p < 16:
        raise ValueError("calculus pair needs p >= 16")
    x = np.linspace(0.0, 1.0, p)
    U = grf_sample(GrfConfig(length_scale, 1.0, x, seed), N)
    V = calculus_pair_outputs(U, x)
    meta = {"name": "calculus-pair", "seed": int(seed), "N": int(N), "p": int(p),
            "length_scale": float(length_scale), "outputs": ["antiderivative", "derivative"]}
    return OperatorDataset(U, x[:, None], V, x[:, None], meta)
