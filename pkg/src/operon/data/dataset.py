"""Operator-learning dataset: discretised input functions and outputs on a shared grid."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from ..errors import DataError, ShapeMismatch
from .container import DATASET_MAGIC, read_container, read_csv_array, write_container


@dataclass(frozen=True)
class OperatorDataset:
    """
    Parameters
    ----------
    U : ndarray, shape (N, p)
        Row ``i`` holds the input function ``u_i`` sampled at ``input_grid``.
    Y : ndarray, shape (q, d)
        Output grid shared by all samples.
    V : ndarray, shape (S, q, N)
        Column ``i`` of ``V[s]`` holds response ``s`` of sample ``i`` on ``Y``.
    input_grid : ndarray, shape (p, d_u)
    metadata : dict
        Generator name, seed and parameters; JSON-serialisable.
    """

    U: np.ndarray
    Y: np.ndarray
    V: np.ndarray
    input_grid: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        U = np.atleast_2d(np.asarray(self.U, dtype=float))
        Y = np.asarray(self.Y, dtype=float)
        if Y.ndim == 1:
            Y = Y[:, None]
        V = np.asarray(self.V, dtype=float)
        if V.ndim == 2:
            V = V[None]
        if V.ndim != 3 or V.shape[1:] != (Y.shape[0], U.shape[0]):
            raise ShapeMismatch(f"V has shape {V.shape}; expected (S, {Y.shape[0]}, {U.shape[0]})")
        grid = self.input_grid
        if grid is None:
            grid = np.linspace(0.0, 1.0, U.shape[1])[:, None]
        grid = np.asarray(grid, dtype=float)
        if grid.ndim == 1:
            grid = grid[:, None]
        if grid.shape[0] != U.shape[1]:
            raise ShapeMismatch(f"input grid has {grid.shape[0]} points, U has {U.shape[1]} columns")
        for name, a in (("U", U), ("Y", Y), ("V", V), ("input_grid", grid)):
            if not np.all(np.isfinite(a)):
                raise DataError(f"{name} contains non-finite entries")
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "V", V)
        object.__setattr__(self, "input_grid", grid)
        object.__setattr__(self, "metadata", dict(self.metadata))

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
    def name(self):
        return self.metadata.get("name", "dataset")

    def subset(self, idx, **meta):
        idx = np.asarray(idx, dtype=int)
        md = copy.deepcopy(self.metadata)
        md.update(meta)
        return OperatorDataset(self.U[idx], self.Y, self.V[:, :, idx], self.input_grid, md)

    def split(self, n_train: int, seed: int = 0):
        """Seeded shuffle, then the first ``n_train`` samples train and the rest test."""
        if not 0 < n_train <= self.N:
            raise ValueError(f"n_train={n_train} must lie in (0, N={self.N}]")
        perm = np.random.default_rng(seed).permutation(self.N)
        split = {"seed": int(seed), "n_train": int(n_train), "n_test": int(self.N - n_train)}
        return (
            self.subset(perm[:n_train], split={**split, "part": "train"}),
            self.subset(perm[n_train:], split={**split, "part": "test"}),
        )

    def output(self, s: int):
        """Single-response view of response ``s``."""
        return OperatorDataset(self.U, self.Y, self.V[s:s + 1], self.input_grid, {**self.metadata, "output": s})

    def with_inputs(self, U):
        return OperatorDataset(U, self.Y, self.V, None if U.shape[1] != self.p else self.input_grid, self.metadata)

    def targets(self):
        """Outputs arranged per sample, shape ``(N, q, S)``."""
        return self.V.transpose(2, 1, 0)

    def arrays(self):
        return {"U": self.U, "Y": self.Y, "V": self.V, "input_grid": self.input_grid}

    def save(self, path):
        return write_container(path, self.arrays(), self.metadata, magic=DATASET_MAGIC)

    @classmethod
    def load(cls, path):
        arrays, meta = read_container(path, magic=DATASET_MAGIC)
        missing = {"U", "Y", "V"} - arrays.keys()
        if missing:
            raise ShapeMismatch(f"dataset file lacks arrays {sorted(missing)}")
        return cls(arrays["U"], arrays["Y"], arrays["V"], arrays.get("input_grid"), meta)

    @classmethod
    def from_csv(cls, U_path, Y_path, V_paths, input_grid_path=None, metadata=None):
        """Build from headerless CSV files; each ``V`` file is ``q x N`` (one per response)."""
        if isinstance(V_paths, (str, bytes)) or hasattr(V_paths, "__fspath__"):
            V_paths = [V_paths]
        V = np.stack([read_csv_array(p) for p in V_paths])
        grid = read_csv_array(input_grid_path) if input_grid_path else None
        md = {"name": "csv-import", **(metadata or {})}
        return cls(read_csv_array(U_path), read_csv_array(Y_path), V, grid, md)


def read_dataset(path) -> OperatorDataset:
    return OperatorDataset.load(path)


def write_dataset(path, dataset: OperatorDataset):
    return dataset.save(path)
