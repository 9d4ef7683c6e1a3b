"""
Physics-informed training of NN-mean GP operators for viscous Burgers with
Dirichlet boundaries::

    v_t + v v_x - nu v_xx = 0   on (0, 1) x (0, 1],   v(0, t) = 0,  v(1, t) = 1,  v(x, 0) = u(x).

The kernel is frozen; only the mean-network weights move. The full predictor
``eta = m + c_y(y, Y) W c_phi(U, u)`` is differentiated in space and time by
central finite differences. Its loss combines the PDE residual, boundary and
initial mismatches on a batch of unlabelled input functions with the
likelihood data term, and the term weights are re-balanced every epoch
against the PDE gradient.
"""

from __future__ import annotations

import csv
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from . import linalg
from .errors import DegenerateGradient, DimensionMismatch, StepOutsideDomain, UnsupportedFamily
from .kernels import KernelFamily, gram, kernel_y_derivs
from .linalg import JitterPolicy
from .means import MeanArchitecture, ZERO, mean_init
from .model import IDENTITY_TRANSFORM, TrainedOperatorGP, factor_grams, fit, residual_weights
from .training import AdamState, InitHeuristics, adam_step

PHYSICS_FIELDS = (
    "epoch", "total", "L_PDE", "L_BC", "L_IC", "L_MLE", "alpha_BC", "alpha_IC", "alpha_MLE", "wall_time",
)
TERMS = ("bc", "ic", "mle")
MIN_GRADIENT = 1e-30
FD_RELATIVE_STEP = 1e-3


@dataclass(frozen=True)
class PdeProblem:
    """
    Parameters
    ----------
    physics_inputs : ndarray, shape (N_pi, p)
        Unlabelled initial conditions sampled on ``input_grid``; their
        interpolant is the initial-condition target.
    input_grid : ndarray, shape (p,)
    bc_values : tuple
        Values imposed at ``x = x_min`` and ``x = x_max``.
    """

    physics_inputs: np.ndarray
    input_grid: np.ndarray
    nu: float = 0.1
    domain: tuple = ((0.0, 1.0), (0.0, 1.0))
    n_pde: int = 100**2
    n_bc: int = 100
    n_ic: int = 100
    bc_values: tuple = (0.0, 1.0)
    residual: str = "burgers-dirichlet"

    def __post_init__(self):
        U = np.atleast_2d(np.asarray(self.physics_inputs, dtype=float))
        grid = np.asarray(self.input_grid, dtype=float).ravel()
        if U.shape[1] != grid.size:
            raise DimensionMismatch(f"physics inputs have {U.shape[1]} values, grid has {grid.size}")
        if min(self.n_pde, self.n_bc, self.n_ic, U.shape[0]) < 1:
            raise ValueError("collocation counts and N_pi must be positive")
        if self.residual != "burgers-dirichlet":
            raise ValueError(f"unsupported residual {self.residual!r}")
        object.__setattr__(self, "physics_inputs", U)
        object.__setattr__(self, "input_grid", grid)

    @property
    def n_pi(self):
        return self.physics_inputs.shape[0]

    @property
    def extent(self):
        return np.array([hi - lo for lo, hi in self.domain])

    @property
    def fd_step(self):
        return FD_RELATIVE_STEP * self.extent

    def ic_function(self):
        return CubicSpline(self.input_grid, self.physics_inputs, axis=1)


@dataclass(frozen=True)
class LossWeights:
    alpha_BC: float = 1.0
    alpha_IC: float = 1.0
    alpha_MLE: float = 1.0
    lam: float = 0.9

    def __post_init__(self):
        if min(self.alpha_BC, self.alpha_IC, self.alpha_MLE) < 0:
            raise ValueError("loss weights must be nonnegative")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must lie in [0, 1]")


@dataclass(frozen=True)
class Collocation:
    pde: np.ndarray
    bc: np.ndarray
    bc_target: np.ndarray
    ic: np.ndarray
    ic_target: np.ndarray  # (N_pi, n_ic)


def _centres(lo, hi, n):
    return lo + (hi - lo) * (np.arange(n) + 0.5) / n


def collocation(problem: PdeProblem) -> Collocation:
    """Fixed cell-centred layouts.

    PDE points fill a square interior grid of ``n_pde`` points (``n_pde`` must
    be a perfect square); boundary points are split evenly between the two
    spatial ends; initial points lie on ``t = t_min``.
    """
    (x0, x1), (t0, t1) = problem.domain
    n = int(round(np.sqrt(problem.n_pde)))
    if n * n != problem.n_pde:
        raise ValueError("n_pde must be a perfect square")
    X, T = np.meshgrid(_centres(x0, x1, n), _centres(t0, t1, n))
    pde = np.column_stack([X.ravel(), T.ravel()])
    n_left = problem.n_bc // 2
    n_right = problem.n_bc - n_left
    bc = np.vstack([
        np.column_stack([np.full(n_left, x0), _centres(t0, t1, n_left)]),
        np.column_stack([np.full(n_right, x1), _centres(t0, t1, n_right)]),
    ])
    bc_target = np.concatenate([np.full(n_left, problem.bc_values[0]), np.full(n_right, problem.bc_values[1])])
    xs = _centres(x0, x1, problem.n_ic)
    ic = np.column_stack([xs, np.full(problem.n_ic, t0)])
    return Collocation(pde, bc, bc_target, ic, problem.ic_function()(xs))


def stencil(points, h, domain=None):
    """Stack ``[y, y + hx, y - hx, y + ht, y - ht]`` for every point; shape ``(5 m, 2)``."""
    points = np.asarray(points, dtype=float)
    hx = np.array([h[0], 0.0])
    ht = np.array([0.0, h[1]])
    st = np.vstack([points, points + hx, points - hx, points + ht, points - ht])
    if domain is not None:
        lo = np.array([a for a, _ in domain])
        hi = np.array([b for _, b in domain])
        if np.any(st < lo - 1e-12) or np.any(st > hi + 1e-12):
            raise StepOutsideDomain("finite-difference stencil leaves the domain; move points inward")
    return st


def fd_derivatives(values, h):
    """Central differences from stencil values shaped ``(5, m, ...)``."""
    c, xp, xm, tp, tm = values
    return {
        "eta": c,
        "eta_x": (xp - xm) / (2.0 * h[0]),
        "eta_t": (tp - tm) / (2.0 * h[1]),
        "eta_xx": (xp - 2.0 * c + xm) / h[0] ** 2,
    }


def predictor_derivatives_fd(model: TrainedOperatorGP, u_star, points, mean=None, h=None,
                             domain=((0.0, 1.0), (0.0, 1.0)), analytic_kernel: bool = False):
    """Predictor value and ``d/dx``, ``d/dt``, ``d2/dx2`` at ``points`` (``m x 2``) for one raw input.

    With ``analytic_kernel`` the kernel correction is differentiated exactly
    through the Gaussian output kernel and only the mean uses finite differences.
    Returns a dict of ``(m, S)`` arrays.
    """
    if model.d != 2:
        raise DimensionMismatch("derivatives are defined for (x, t) output grids")
    if model.kernel.output.family is not KernelFamily.GAUSSIAN:
        raise UnsupportedFamily("finite-difference derivatives require the Gaussian output kernel")
    mean = mean or model.mean
    h = np.asarray(h if h is not None else FD_RELATIVE_STEP * np.array([b - a for a, b in domain]), dtype=float)
    points = np.asarray(points, dtype=float)
    m = points.shape[0]
    st = stencil(points, h, domain)
    phi = model.transform.apply(np.asarray(u_star, dtype=float)[None, :])
    k_phi = gram(model.kernel.input, model.U, phi)[:, 0]  # (N,)
    Wk = model.W @ k_phi  # (S, q)
    M = mean.forward(phi, st)[0][:, :, 0]  # (S, 5m)
    out = fd_derivatives(M.T.reshape(5, m, model.S), h)
    if analytic_kernel:
        value, grad, hess = kernel_y_derivs(model.kernel.output, points, model.Y)
        out["eta"] = out["eta"] + value @ Wk.T
        out["eta_x"] = out["eta_x"] + grad[0] @ Wk.T
        out["eta_t"] = out["eta_t"] + grad[1] @ Wk.T
        out["eta_xx"] = out["eta_xx"] + hess[0] @ Wk.T
        return out
    corr = gram(model.kernel.output, st, model.Y) @ Wk.T  # (5m, S)
    kd = fd_derivatives(corr.reshape(5, m, model.S), h)
    return {k: out[k] + kd[k] for k in out}


def burgers_residual(d, nu):
    return d["eta_t"] + d["eta"] * d["eta_x"] - nu * d["eta_xx"]


def aggregate_physics_loss(terms, weights: LossWeights, mle: float) -> float:
    """``L_PDE + alpha_BC L_BC + alpha_IC L_IC + alpha_MLE L_MLE``."""
    return (terms["L_PDE"] + weights.alpha_BC * terms["L_BC"] + weights.alpha_IC * terms["L_IC"]
            + weights.alpha_MLE * mle)


def adaptive_weight_update(prev_alpha: float, grad_ref_maxabs: float, grad_term_meanabs: float,
                           lam: float = 0.9) -> float:
    """Moving-average re-balancing ``(1 - lam) prev + lam * max|grad L_PDE| / mean|grad L_term|``.

    A vanishing term gradient leaves the weight unchanged and emits
    :class:`DegenerateGradient`.
    """
    if grad_term_meanabs < MIN_GRADIENT:
        warnings.warn(f"term gradient mean {grad_term_meanabs:g} below {MIN_GRADIENT:g}; weight frozen",
                      DegenerateGradient, stacklevel=2)
        return float(prev_alpha)
    return float((1.0 - lam) * prev_alpha + lam * (grad_ref_maxabs / grad_term_meanabs))


class PhysicsEvaluator:
    """Loss terms and their per-term weight gradients for a frozen kernel.

    Cross-covariances between collocation stencils and the training grid, and
    between training and physics inputs, are computed once.
    """

    def __init__(self, feats, kernel, factors, problem: PdeProblem, transform=IDENTITY_TRANSFORM,
                 colloc: Collocation | None = None, mse: bool = False):
        if kernel.output.family is not KernelFamily.GAUSSIAN:
            raise UnsupportedFamily("physics training requires the Gaussian output kernel")
        if feats.S != 1 or feats.d != 2:
            raise DimensionMismatch("physics training expects one response on an (x, t) grid")
        self.U, self.Y, self.V = feats.U, feats.Y, feats.V
        self.factors = factors
        self.problem = problem
        self.mse = mse
        self.colloc = colloc or collocation(problem)
        self.h = problem.fd_step
        self.phi = transform.apply(problem.physics_inputs)
        self.points = {
            "pde": stencil(self.colloc.pde, self.h, problem.domain),
            "bc": self.colloc.bc,
            "ic": self.colloc.ic,
        }
        self.A = {k: gram(kernel.output, P, self.Y) for k, P in self.points.items()}
        self.B = gram(kernel.input, self.U, self.phi)  # N x N_pi
        F_phi, F_y = factors
        self.logdet = feats.S * (feats.q * linalg.log_det(F_phi) + feats.N * linalg.log_det(F_y))

    def _data_term(self, mean):
        M, cache = mean.forward(self.U, self.Y)
        R = self.V - M
        W = R if self.mse else residual_weights(*self.factors, R)
        return float(np.sum(R * W)), W, cache

    def _weights_of(self, dW):
        """Pull back ``dL/dW`` to ``dL/dM`` on the training pairs."""
        if self.mse:
            return -dW
        return -residual_weights(*self.factors, dW)

    def evaluate(self, mean, with_grad=True):
        """Returns ``(terms, grads)``; ``terms`` has ``L_PDE, L_BC, L_IC, L_MLE``."""
        L_mle, W, data_cache = self._data_term(mean)
        WB = W[0] @ self.B  # q x N_pi
        terms, seeds, caches = {"L_MLE": L_mle}, {}, {}
        for key, P in self.points.items():
            Mt, caches[key] = mean.forward(self.phi, P)
            eta = Mt[0] + self.A[key] @ WB  # (n_points, N_pi)
            if key == "pde":
                m = self.colloc.pde.shape[0]
                vals = eta.reshape(5, m, -1)
                d = fd_derivatives(vals, self.h)
                r = burgers_residual(d, self.problem.nu)
                terms["L_PDE"] = float(np.mean(r * r))
                if with_grad:
                    g = 2.0 * r / r.size
                    hx, ht = self.h
                    nu = self.problem.nu
                    G = np.stack([
                        g * (d["eta_x"] + 2.0 * nu / hx**2),
                        g * (d["eta"] / (2.0 * hx) - nu / hx**2),
                        g * (-d["eta"] / (2.0 * hx) - nu / hx**2),
                        g / (2.0 * ht),
                        -g / (2.0 * ht),
                    ])
                    seeds[key] = G.reshape(5 * m, -1)
            else:
                target = self.colloc.bc_target[:, None] if key == "bc" else self.colloc.ic_target.T
                diff = eta - target
                terms["L_BC" if key == "bc" else "L_IC"] = float(np.mean(diff * diff))
                if with_grad:
                    seeds[key] = 2.0 * diff / diff.size
        if not with_grad:
            return terms, None
        grads = {"mle": mean.backward(data_cache, -2.0 * W)}
        for key, G in seeds.items():
            direct = mean.backward(caches[key], G[None])
            dW = self.A[key].T @ G @ self.B.T
            grads[key] = direct + mean.backward(data_cache, self._weights_of(dW[None]))
        return terms, grads


def burgers_residual_loss(model: TrainedOperatorGP, problem: PdeProblem, mean=None, colloc=None):
    """``{L_PDE, L_BC, L_IC}`` of a fitted model on the problem's physics inputs.

    ``W`` is recomputed from the training residual of ``mean`` (the model's own
    mean by default, which reproduces the stored ``W``).
    """
    from .data.dataset import OperatorDataset

    mean = mean or model.mean
    feats = OperatorDataset(model.U, model.Y, model.V)
    ev = PhysicsEvaluator(feats, model.kernel, (model.chol_phi, model.chol_y), problem, model.transform, colloc)
    terms, _ = ev.evaluate(mean, with_grad=False)
    return {k: terms[k] for k in ("L_PDE", "L_BC", "L_IC")}


@dataclass(frozen=True)
class PhysicsConfig:
    epochs: int = 1000
    lr: float = 1e-3
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    adapt: tuple = TERMS
    mse: bool = False
    jitter: JitterPolicy = field(default_factory=JitterPolicy)
    log_path: str | None = None

    def __post_init__(self):
        bad = set(self.adapt) - set(TERMS)
        if bad:
            raise ValueError(f"unknown adaptive terms {sorted(bad)}")


def write_physics_csv(path, history):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(PHYSICS_FIELDS), lineterminator="\n")
        w.writeheader()
        for row in history:
            w.writerow({k: repr(row[k]) if isinstance(row[k], float) else row[k] for k in PHYSICS_FIELDS})


def train_physics_informed(dataset, problem: PdeProblem, mean_arch: MeanArchitecture,
                           config: PhysicsConfig | None = None, init: InitHeuristics | None = None):
    """Adam on the mean weights for the aggregated physics loss; returns ``(model, history)``.

    Each epoch evaluates all terms at the current weights, steps with the
    current term weights, then updates the weights from that epoch's
    gradients. ``W`` is recomputed from the current mean on every evaluation.
    """
    config = config or PhysicsConfig()
    init = init or InitHeuristics()
    if mean_arch.variant == ZERO:
        raise ValueError("physics-informed training requires a trainable mean")
    kernel = init.kernel(dataset.p, dataset.d)
    factors = factor_grams(kernel, dataset.U, dataset.Y, config.jitter)
    ev = PhysicsEvaluator(dataset, kernel, factors, problem, mse=config.mse)
    mean = mean_init(mean_arch, config.seed)
    theta = mean.theta.copy()
    state = AdamState.create(theta.size, config.lr)
    alpha = {"bc": config.weights.alpha_BC, "ic": config.weights.alpha_IC, "mle": config.weights.alpha_MLE}
    lam = config.weights.lam
    history = []
    t0 = time.perf_counter()
    for epoch in range(config.epochs + 1):
        last = epoch == config.epochs
        terms, grads = ev.evaluate(mean.with_theta(theta), with_grad=not last)
        w = LossWeights(alpha["bc"], alpha["ic"], alpha["mle"], lam)
        history.append({
            "epoch": epoch, "total": aggregate_physics_loss(terms, w, terms["L_MLE"]),
            **terms, "alpha_BC": alpha["bc"], "alpha_IC": alpha["ic"], "alpha_MLE": alpha["mle"],
            "wall_time": time.perf_counter() - t0,
        })
        if last:
            break
        g = grads["pde"] + alpha["bc"] * grads["bc"] + alpha["ic"] * grads["ic"] + alpha["mle"] * grads["mle"]
        theta = adam_step(state, theta, g)
        ref = float(np.abs(grads["pde"]).max(initial=0.0))
        for key in config.adapt:
            alpha[key] = adaptive_weight_update(alpha[key], ref, float(np.mean(np.abs(grads[key]))), lam)
    model = fit(dataset, kernel, mean.with_theta(theta), factors=factors)
    if config.log_path:
        write_physics_csv(config.log_path, history)
    return model, history


__all__ = [
    "Collocation", "LossWeights", "PdeProblem", "PhysicsConfig", "PhysicsEvaluator", "adaptive_weight_update",
    "aggregate_physics_loss", "burgers_residual", "burgers_residual_loss", "collocation", "fd_derivatives",
    "predictor_derivatives_fd", "stencil", "train_physics_informed", "write_physics_csv",
]
