"""Datasets: container I/O, input-function sampling and desk-scale generators."""

from .burgers import gen_burgers, solve_burgers_dirichlet, solve_burgers_periodic
from .container import decode_container, encode_container, read_container, read_csv_array, write_container
from .darcy import gen_darcy, solve_darcy
from .dataset import OperatorDataset, read_dataset, write_dataset
from .grf import GrfConfig, grf_covariance, grf_sample
from .simple import gen_advection, gen_calculus_pair, square_wave

GENERATORS = ("advection", "burgers-periodic", "burgers-dirichlet", "darcy", "calculus-pair")

__all__ = [
    "GENERATORS", "GrfConfig", "OperatorDataset", "decode_container", "encode_container",
    "gen_advection", "gen_burgers", "gen_calculus_pair", "gen_darcy", "grf_covariance", "grf_sample",
    "read_container", "read_csv_array", "read_dataset", "solve_burgers_dirichlet", "solve_burgers_periodic",
    "solve_darcy", "square_wave", "write_container", "write_dataset",
]
