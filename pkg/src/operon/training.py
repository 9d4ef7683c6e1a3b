"""
Optimisation of GP operator models.

Zero-mean models learn only kernel hyperparameters: per-feature input
length-scales, the input variance and optionally the output length-scales, all
in log space. Gradients of the negative log-likelihood are closed-form. With
``W_s = C_y^{-1} V_s C_phi^{-1}`` and the input-side sensitivity

    K_phi = 0.5 * (S q C_phi^{-1} - sum_s W_s^T V_s C_phi^{-1}),

the derivative along any input-kernel parameter ``t`` is ``sum(K_phi * dC_phi/dt)``;
the output side is symmetric with ``K_y = 0.5 * (S N C_y^{-1} - sum_s W_s C_phi W_s^T)``.

NN-mean models keep the kernel frozen and learn only the mean-network weights
by back-propagating ``dL/dM = -2 W``.
"""

from __future__ import annotations

import csv
import enum
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import pdist

from . import linalg
from .errors import DimensionMismatch, NotPositiveDefinite, TrainingAborted
from .kernels import (
    KernelFamily,
    KernelParams,
    SeparableKernelParams,
    ard_contraction,
    gram,
    gram_and_slope,
)
from .linalg import JitterPolicy
from .means import MeanArchitecture, MeanFunction, mean_init
from .model import (
    IDENTITY_TRANSFORM,
    InputTransform,
    LossValue,
    TrainedOperatorGP,
    factor_grams,
    fit,
    identity_factor,
    residual_weights,
)

HISTORY_FIELDS = ("epoch", "total", "logdet_term", "quad_term", "wall_time")


class TrainMode(str, enum.Enum):
    ZERO_SHOT = "zero-shot"
    ONE_SHOT = "one-shot"
    ZERO_MEAN = "zero-mean"
    NN_MEAN = "nn-mean"


DEFAULT_EPOCHS = {TrainMode.ZERO_SHOT: 0, TrainMode.ONE_SHOT: 1, TrainMode.ZERO_MEAN: 3000, TrainMode.NN_MEAN: 3000}
MULTI_OUTPUT_EPOCHS = 2000
DEFAULT_LR = {TrainMode.ZERO_SHOT: 1e-2, TrainMode.ONE_SHOT: 1e-2, TrainMode.ZERO_MEAN: 1e-2, TrainMode.NN_MEAN: 1e-3}


@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def create(cls, n, lr=1e-3, **kw):
        return cls(np.zeros(n), np.zeros(n), 0, lr, **kw)


def adam_step(state: AdamState, params, grads):
    """One bias-corrected Adam update; ``state`` is advanced in place and the new parameters returned."""
    params = np.asarray(params, dtype=float)
    grads = np.asarray(grads, dtype=float)
    if params.shape != grads.shape or params.shape != state.first_moment.shape:
        raise DimensionMismatch(
            f"params {params.shape}, grads {grads.shape} and moments {state.first_moment.shape} differ"
        )
    state.step_count += 1
    b1, b2, t = state.beta1, state.beta2, state.step_count
    state.first_moment = b1 * state.first_moment + (1.0 - b1) * grads
    state.second_moment = b2 * state.second_moment + (1.0 - b2) * grads * grads
    m_hat = state.first_moment / (1.0 - b1**t)
    v_hat = state.second_moment / (1.0 - b2**t)
    return params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


@dataclass(frozen=True)
class InitHeuristics:
    """Initial kernel values shared by every mode.

    ``beta_y_init`` is large so the output Gram stays close to interpolating
    the dense output grid; ``beta_phi_init`` is small because input functions
    have many features.
    """

    beta_y_init: float = 1e3
    beta_phi_init: float = 1e-2
    sigma2_phi_init: float = 1.0

    def __post_init__(self):
        if min(self.beta_y_init, self.beta_phi_init, self.sigma2_phi_init) <= 0:
            raise ValueError("initial kernel values must be positive")

    def kernel(self, p, d, input_family=KernelFamily.GAUSSIAN, output_family=KernelFamily.GAUSSIAN):
        return SeparableKernelParams(
            KernelParams.create(input_family, self.beta_phi_init, self.sigma2_phi_init, dim=p),
            KernelParams.create(output_family, self.beta_y_init, 1.0, dim=d),
        )


@dataclass(frozen=True)
class TrainConfig:
    mode: TrainMode = TrainMode.ZERO_MEAN
    epochs: int | None = None
    lr: float | None = None
    seed: int = 0
    optimize_beta_y: bool = False
    mse: bool = False
    input_family: KernelFamily = KernelFamily.GAUSSIAN
    output_family: KernelFamily = KernelFamily.GAUSSIAN
    pca: int | None = None
    input_scale: float | str = 1.0  # or "median", see median_input_scale
    jitter: JitterPolicy = field(default_factory=JitterPolicy)
    log_path: str | None = None
    epochs_defaulted: bool = field(default=False, init=False, repr=False, compare=False)

    def __post_init__(self):
        mode = TrainMode(self.mode)
        object.__setattr__(self, "mode", mode)
        object.__setattr__(self, "input_family", KernelFamily(self.input_family))
        object.__setattr__(self, "output_family", KernelFamily(self.output_family))
        fixed = {TrainMode.ZERO_SHOT: 0, TrainMode.ONE_SHOT: 1}
        if self.epochs is None:
            object.__setattr__(self, "epochs", DEFAULT_EPOCHS[mode])
            object.__setattr__(self, "epochs_defaulted", True)
        elif mode in fixed and self.epochs != fixed[mode]:
            raise ValueError(f"{mode.value} mode runs exactly {fixed[mode]} epochs, got {self.epochs}")
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")
        if self.lr is None:
            object.__setattr__(self, "lr", DEFAULT_LR[mode])
        if self.input_scale != "median" and not float(self.input_scale) > 0:
            raise ValueError("input_scale must be positive or 'median'")

    def epochs_for(self, S: int) -> int:
        """Epoch count for a dataset with ``S`` outputs; an unset count drops to 2000 when ``S > 1``."""
        if self.epochs_defaulted and S > 1 and self.mode in (TrainMode.ZERO_MEAN, TrainMode.NN_MEAN):
            return MULTI_OUTPUT_EPOCHS
        return self.epochs


class ZeroMeanObjective:
    """Negative log-likelihood of a zero-mean model and its gradient in log-parameter space.

    Parameter vector: ``[log beta_phi (p), log sigma2_phi, log beta_y (d, only if optimised)]``.
    When the output kernel is frozen its factor and ``C_y^{-1} V`` are computed once.
    """

    def __init__(self, U, Y, V, kernel: SeparableKernelParams, optimize_beta_y=False,
                 policy: JitterPolicy | None = None):
        self.U = np.asarray(U, dtype=float)
        self.Y = np.asarray(Y, dtype=float)
        self.V = np.asarray(V, dtype=float)
        self.S, self.q, self.N = self.V.shape
        self.p, self.d = self.U.shape[1], self.Y.shape[1]
        self.input_family = kernel.input.family
        self.output_family = kernel.output.family
        self.log_beta_y = kernel.output.log_beta
        self.optimize_beta_y = optimize_beta_y
        self.policy = policy or JitterPolicy()
        self._frozen_y = None
        self._phi_level = 0
        if not optimize_beta_y:
            self._frozen_y = self._output_side(kernel.output)

    def _output_side(self, ky):
        Cy, slope = gram_and_slope(ky, self.Y)
        Fy = linalg.cholesky_with_jitter(Cy, self.policy)
        Vt = np.stack([linalg.chol_solve(Fy, Vs) for Vs in self.V])
        return Fy, Vt, slope

    def initial_params(self, kernel: SeparableKernelParams):
        parts = [kernel.input.log_beta, [kernel.input.log_sigma2]]
        if self.optimize_beta_y:
            parts.append(kernel.output.log_beta)
        return np.concatenate(parts)

    def kernel(self, params) -> SeparableKernelParams:
        p = self.p
        ki = KernelParams(self.input_family, params[:p], params[p])
        lby = params[p + 1:p + 1 + self.d] if self.optimize_beta_y else self.log_beta_y
        return SeparableKernelParams(ki, KernelParams(self.output_family, lby, 0.0))

    def evaluate(self, params, with_grad=True):
        """Returns ``(LossValue, gradient or None)``."""
        k = self.kernel(params)
        Cphi, slope_phi = gram_and_slope(k.input, self.U)
        Fphi = linalg.cholesky_with_jitter(Cphi, self.policy, self._phi_level, check_symmetric=False)
        self._phi_level = Fphi.level
        Cphi_inv = linalg.chol_inverse(Fphi)
        if self._frozen_y is not None:
            Fy, Vt, slope_y = self._frozen_y
        else:
            Fy, Vt, slope_y = self._output_side(k.output)
        W = Vt @ Cphi_inv  # (S, q, N) = C_y^{-1} V C_phi^{-1}
        # the reported loss follows nll_kron operation for operation so epoch 0 matches it bit for bit
        quad = float(np.sum(self.V * residual_weights(Fphi, Fy, self.V)))
        logdet = self.S * (self.q * linalg.log_det(Fphi) + self.N * linalg.log_det(Fy))
        loss = LossValue.from_terms(logdet, quad)
        if not with_grad:
            return loss, None
        P = self.V @ Cphi_inv
        WP = sum(W[s].T @ P[s] for s in range(self.S))
        K_phi = 0.5 * (self.S * self.q * Cphi_inv - WP)
        g = [ard_contraction(K_phi * slope_phi, self.U, k.input.beta), [np.sum(K_phi * Cphi)]]
        if self.optimize_beta_y:
            Cy_inv = linalg.chol_inverse(Fy)
            K_y = 0.5 * (self.S * self.N * Cy_inv - sum(W[s] @ Vt[s].T for s in range(self.S)))
            g.append(ard_contraction(K_y * slope_y, self.Y, k.output.beta))
        return loss, np.concatenate(g)


def grad_nll_kron(dataset, kernel: SeparableKernelParams, optimize_beta_y: bool = False,
                  policy: JitterPolicy | None = None):
    """Analytic gradient of the zero-mean negative log-likelihood.

    Order: ``[d/dlog beta_phi (p), d/dlog sigma2_phi, d/dlog beta_y (d, if requested)]``.
    """
    obj = ZeroMeanObjective(dataset.U, dataset.Y, dataset.V, kernel, optimize_beta_y, policy)
    return obj.evaluate(obj.initial_params(kernel))[1]


def _row(epoch, loss: LossValue, t0):
    return {"epoch": epoch, "total": loss.total, "logdet_term": loss.logdet_term,
            "quad_term": loss.quad_term, "wall_time": time.perf_counter() - t0}


def write_history_csv(path, history, fields=None):
    fields = fields or (list(history[0].keys()) if history else list(HISTORY_FIELDS))
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for row in history:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items() if k in fields})


def median_input_scale(X, beta_phi: float) -> float:
    """Scale ``s`` with ``beta_phi * s**2 * median_ij |x_i - x_j|^2 = 1`` over distinct pairs of rows of ``X``.

    At this scale a typical pair of training inputs has correlation ``exp(-1)``
    under the Gaussian input kernel, so the default ``beta_phi`` neither
    decorrelates every sample (the predictor collapses to the mean) nor makes
    the input Gram nearly singular.
    """
    d2 = pdist(np.asarray(X, dtype=float), "sqeuclidean")
    d2 = d2[d2 > 0]
    if not d2.size:
        return 1.0
    return float(1.0 / np.sqrt(beta_phi * np.median(d2)))


def prepare_features(dataset, config: TrainConfig, beta_phi: float | None = None):
    """Apply the configured PCA projection and scaling; returns ``(feature dataset, transform)``.

    ``beta_phi`` is only used to resolve ``input_scale="median"`` (defaults to
    the initial value of :class:`InitHeuristics`).
    """
    if config.pca is None and config.input_scale == 1.0:
        return dataset, IDENTITY_TRANSFORM
    pca = linalg.pca_fit(dataset.U, config.pca) if config.pca is not None else None
    scale = config.input_scale
    if scale == "median":
        Z = pca.transform(dataset.U) if pca is not None else dataset.U
        scale = median_input_scale(Z, InitHeuristics().beta_phi_init if beta_phi is None else beta_phi)
    transform = InputTransform(pca, float(scale))
    return dataset.with_inputs(transform.apply(dataset.U)), transform


def _adam_loop(evaluate, params, epochs, lr, history, t0, on_failure):
    """Shared loop: log the loss at the current parameters, then step; the last row has no step."""
    state = AdamState.create(params.size, lr)
    for epoch in range(epochs + 1):
        try:
            loss, grad = evaluate(params, epoch < epochs)
        except NotPositiveDefinite as exc:
            if not on_failure():
                raise TrainingAborted(f"factorisation failed at epoch {epoch}: {exc}", history) from exc
            try:
                loss, grad = evaluate(params, epoch < epochs)
            except NotPositiveDefinite as exc2:
                raise TrainingAborted(f"factorisation failed at epoch {epoch} after escalating jitter: {exc2}",
                                      history) from exc2
        history.append(_row(epoch, loss, t0))
        if epoch < epochs:
            params = adam_step(state, params, grad)
    return params


def train(dataset, config: TrainConfig | None = None, init: InitHeuristics | None = None,
          mean_arch: MeanArchitecture | None = None):
    """Train a model on ``dataset`` (raw inputs); returns ``(model, history)``.

    ``history`` holds one row per epoch with the loss evaluated before that
    epoch's update, plus a final row at the returned parameters. Row 0 is
    therefore the loss at the initial kernel.
    """
    config = config or TrainConfig()
    init = init or InitHeuristics()
    feats, transform = prepare_features(dataset, config, init.beta_phi_init)
    S = feats.S
    epochs = config.epochs_for(S)
    kernel0 = init.kernel(feats.p, feats.d, config.input_family, config.output_family)
    policy = [config.jitter]
    escalations = [0]
    t0 = time.perf_counter()
    history = []

    def escalate():
        if escalations[0]:
            return False
        escalations[0] += 1
        policy[0] = policy[0].escalated()
        return True

    if config.mode is TrainMode.NN_MEAN:
        if mean_arch is None:
            raise ValueError("nn-mean training needs a mean architecture")
        if (mean_arch.input_dim, mean_arch.coord_dim, mean_arch.outputs) != (feats.p, feats.d, S):
            raise DimensionMismatch("mean architecture does not match the dataset dimensions")
        # the frozen kernel shares one input length-scale across features
        kernel = kernel0
        mean = mean_init(mean_arch, config.seed)
        state = {"factors": factor_grams(kernel, feats.U, feats.Y, policy[0])}

        def evaluate(theta, with_grad):
            m = mean.with_theta(theta)
            M, cache = m.forward(feats.U, feats.Y)
            R = feats.V - M
            if config.mse:
                W, logdet = R, 0.0
            else:
                F_phi, F_y = state["factors"]
                W = residual_weights(F_phi, F_y, R)
                logdet = S * (feats.q * linalg.log_det(F_phi) + feats.N * linalg.log_det(F_y))
            loss = LossValue.from_terms(logdet, float(np.sum(R * W)))
            return loss, (m.backward(cache, -2.0 * W) if with_grad else None)

        def on_failure():
            return False

        theta = _adam_loop(evaluate, mean.theta.copy(), epochs, config.lr, history, t0, on_failure)
        mean = mean.with_theta(theta)
        model = fit(feats, kernel, mean, transform=transform, factors=state["factors"])
    else:
        if mean_arch is not None and mean_arch.variant != "zero":
            raise ValueError(f"{config.mode.value} training uses a zero mean")
        obj = ZeroMeanObjective(feats.U, feats.Y, feats.V, kernel0, config.optimize_beta_y, policy[0])

        def on_failure():
            ok = escalate()
            obj.policy = policy[0]
            return ok

        params = _adam_loop(obj.evaluate, obj.initial_params(kernel0), epochs, config.lr,
                            history, t0, on_failure)
        kernel = obj.kernel(params) if epochs else kernel0
        model = fit(feats, kernel, policy=policy[0], transform=transform)
    if config.log_path:
        write_history_csv(config.log_path, history, list(HISTORY_FIELDS))
    return model, history


def _rel_errors(analytic, fd):
    analytic, fd = np.asarray(analytic), np.asarray(fd)
    scale = max(np.abs(fd).max(initial=0.0), np.abs(analytic).max(initial=0.0))
    if scale == 0.0:
        return np.zeros_like(analytic)
    # entries far below the gradient scale carry only step truncation noise, so they
    # are compared relative to 1e-4 of the largest entry
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(fd)), 1e-4 * scale)
    return np.abs(analytic - fd) / denom


@dataclass(frozen=True)
class GradCheckReport:
    analytic: np.ndarray
    finite_difference: np.ndarray
    rel_error: np.ndarray

    @property
    def max_rel_error(self):
        return float(self.rel_error.max(initial=0.0))


def _central_differences(f, x, h):
    g = np.zeros_like(x)
    for i in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2.0 * h)
    return g


def grad_check(component: str, dataset, kernel: SeparableKernelParams | None = None,
               mean: MeanFunction | None = None, optimize_beta_y: bool = False, h: float = 1e-5,
               frozen: bool = False) -> GradCheckReport:
    """Compare analytic gradients with central differences in the optimised parameterisation.

    ``component`` is ``"kernel-hparams"`` (zero-mean likelihood) or
    ``"mean-params"`` (frozen-kernel data term). ``frozen`` reports the
    zero-shot situation where nothing is optimised: both gradients are zero.
    """
    if component == "kernel-hparams":
        obj = ZeroMeanObjective(dataset.U, dataset.Y, dataset.V, kernel, optimize_beta_y, linalg.ZERO_JITTER)
        x0 = obj.initial_params(kernel)
        if frozen:
            z = np.zeros_like(x0)
            return GradCheckReport(z, z.copy(), z.copy())
        analytic = obj.evaluate(x0)[1]
        fd = _central_differences(lambda x: obj.evaluate(x, False)[0].total, x0, h)
    elif component == "mean-params":
        if mean is None:
            raise ValueError("mean-params check needs a mean function")
        if kernel is None:
            F_phi, F_y = identity_factor(dataset.N), identity_factor(dataset.q)
        else:
            F_phi, F_y = factor_grams(kernel, dataset.U, dataset.Y, linalg.ZERO_JITTER)
        x0 = mean.theta.copy()
        if frozen:
            z = np.zeros_like(x0)
            return GradCheckReport(z, z.copy(), z.copy())

        def loss(theta):
            R = dataset.V - mean.with_theta(theta).forward(dataset.U, dataset.Y)[0]
            return float(np.sum(R * residual_weights(F_phi, F_y, R)))

        M, cache = mean.forward(dataset.U, dataset.Y)
        W = residual_weights(F_phi, F_y, dataset.V - M)
        analytic = mean.backward(cache, -2.0 * W)
        fd = _central_differences(loss, x0, h)
    else:
        raise ValueError(f"unknown gradient component {component!r}")
    return GradCheckReport(analytic, fd, _rel_errors(analytic, fd))


__all__ = [
    "AdamState", "GradCheckReport", "InitHeuristics", "TrainConfig", "TrainMode", "ZeroMeanObjective",
    "adam_step", "grad_check", "grad_nll_kron", "median_input_scale", "prepare_features", "train", "write_history_csv",
]
