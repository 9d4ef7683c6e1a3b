"""Two-dimensional Darcy flow ``-div(a grad u) = f`` on the unit square with ``u = 0`` on the boundary."""

from __future__ import annotations

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from ..errors import SolverSingular
from .dataset import OperatorDataset
from .grf import GrfConfig, grf_sample

HIGH, LOW = 12.0, 3.0


def _harmonic(a, b):
    return 2.0 * a * b / (a + b)


def darcy_matrix(a):
    """Five-point conservative operator on the interior nodes of a ``g x g`` node grid.

    Face coefficients are harmonic means of the two adjacent nodal values.
    """
    a = np.asarray(a, dtype=float)
    g = a.shape[0]
    if a.shape != (g, g) or g < 3:
        raise ValueError("coefficient must be a square nodal grid with g >= 3")
    h = 1.0 / (g - 1)
    n = g - 2
    ax = _harmonic(a[1:, 1:-1], a[:-1, 1:-1])  # faces between x-neighbours, shape (g-1, n)
    ay = _harmonic(a[1:-1, 1:], a[1:-1, :-1])  # faces between y-neighbours, shape (n, g-1)
    west, east = ax[:-1], ax[1:]
    south, north = ay[:, :-1], ay[:, 1:]
    diag = (west + east + south + north).ravel()
    idx = np.arange(n * n).reshape(n, n)
    rows, cols, vals = [idx.ravel()], [idx.ravel()], [diag]
    # neighbour couplings (interior only; boundary values are zero)
    rows += [idx[1:, :].ravel(), idx[:-1, :].ravel(), idx[:, 1:].ravel(), idx[:, :-1].ravel()]
    cols += [idx[:-1, :].ravel(), idx[1:, :].ravel(), idx[:, :-1].ravel(), idx[:, 1:].ravel()]
    vals += [-west[1:, :].ravel(), -east[:-1, :].ravel(), -south[:, 1:].ravel(), -north[:, :-1].ravel()]
    A = sparse.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n * n, n * n))
    return A / h**2


def solve_darcy(a, f=1.0):
    """Nodal solution on the ``g x g`` grid (boundary rows and columns are zero).

    Grid index ``[i, j]`` corresponds to ``(x_i, y_j)``.
    """
    a = np.asarray(a, dtype=float)
    g = a.shape[0]
    if np.any(a <= 0):
        raise SolverSingular("coefficient must be positive")
    f = np.broadcast_to(np.asarray(f, dtype=float), (g, g))
    try:
        lu = splu(darcy_matrix(a))
    except RuntimeError as exc:
        raise SolverSingular(str(exc)) from exc
    u = np.zeros((g, g))
    u[1:-1, 1:-1] = lu.solve(np.ascontiguousarray(f[1:-1, 1:-1]).ravel()).reshape(g - 2, g - 2)
    return u


def gen_darcy(N: int, g: int = 29, seed: int = 0, length_scale: float = 0.15, f: float = 1.0) -> OperatorDataset:
    """Piecewise-constant permeability (12 where a GRF draw is positive, 3 elsewhere) to pressure.

    ``U`` rows are the flattened nodal coefficient, ``V`` columns the flattened
    nodal solution, both on the same ``g x g`` grid including the boundary.
    """
    if g < 9:
        raise ValueError("darcy needs g >= 9")
    x = np.linspace(0.0, 1.0, g)
    X, Yg = np.meshgrid(x, x, indexing="ij")
    nodes = np.column_stack([X.ravel(), Yg.ravel()])
    field = grf_sample(GrfConfig(length_scale, 1.0, nodes, seed), N)
    U = np.where(field > 0, HIGH, LOW)
    V = np.stack([solve_darcy(row.reshape(g, g), f).ravel() for row in U])
    meta = {"name": "darcy", "seed": int(seed), "N": int(N), "g": int(g),
            "length_scale": float(length_scale), "f": float(f), "values": [HIGH, LOW]}
    return OperatorDataset(U, nodes, V.T[None], nodes, meta)
