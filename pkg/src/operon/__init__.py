"""Gaussian-process operator learning with Kronecker-structured covariances."""

from .errors import (
    AllocationLimit,
    CorruptManifest,
    DataError,
    DegenerateGradient,
    DimensionMismatch,
    NotPositiveDefinite,
    OperonError,
    RankDeficient,
    ShapeMismatch,
    SolverSingular,
    StepOutsideDomain,
    TrainingAborted,
    UnstableStep,
    UnsupportedFamily,
    UnsupportedVersion,
    ZeroNormTruth,
)
from .kernels import KernelFamily, KernelParams, SeparableKernelParams, gram, kernel_eval
from .means import MeanArchitecture, MeanFunction, mean_eval, mean_grad_params, mean_init
from .model import (
    LossValue,
    TrainedOperatorGP,
    fit,
    load_model,
    loss_nn_mle,
    nll_dense_oracle,
    nll_kron,
    optimal_recovery_predict,
    predict,
    save_model,
)
from .training import AdamState, InitHeuristics, TrainConfig, TrainMode, adam_step, grad_check, grad_nll_kron, train

__version__ = "0.1.0"
