"""
Prior mean functions ``m(phi(u), y; theta)`` evaluated on the full
(sample x grid point) product.

Three variants are supported:

* ``zero``: no parameters, returns zeros.
* ``mlp``: a tanh network applied to the concatenation ``[phi(u); y]`` with
  one linear output per response. The first layer is split into an input part
  and a coordinate part so the ``N x q`` pairs are never concatenated.
* ``branch-trunk``: a branch net on ``phi(u)`` producing ``S * latent``
  coefficients and a trunk net on ``y`` producing ``latent`` basis values; each
  response is the inner product plus a scalar bias.

Parameters live in one flat vector ``theta``. Gradients are obtained by
reverse accumulation (:meth:`MeanFunction.backward`).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch

ZERO, MLP, BRANCH_TRUNK = "zero", "mlp", "branch-trunk"
VARIANTS = (ZERO, MLP, BRANCH_TRUNK)


@dataclass(frozen=True)
class MeanArchitecture:
    variant: str
    input_dim: int
    coord_dim: int
    outputs: int = 1
    hidden: tuple = ()
    branch: tuple = ()
    trunk: tuple = ()
    latent: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown mean variant {self.variant!r}; expected one of {VARIANTS}")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        object.__setattr__(self, "branch", tuple(int(h) for h in self.branch))
        object.__setattr__(self, "trunk", tuple(int(h) for h in self.trunk))
        if self.variant == BRANCH_TRUNK and self.latent < 1:
            raise ValueError("branch-trunk mean needs latent >= 1")

    @classmethod
    def zero(cls, input_dim, coord_dim, outputs=1):
        return cls(ZERO, input_dim, coord_dim, outputs)

    @classmethod
    def mlp(cls, input_dim, coord_dim, hidden=(64, 64), outputs=1):
        return cls(MLP, input_dim, coord_dim, outputs, hidden=hidden)

    @classmethod
    def branch_trunk(cls, input_dim, coord_dim, branch=(64, 64), trunk=(64, 64), latent=32, outputs=1):
        return cls(BRANCH_TRUNK, input_dim, coord_dim, outputs, branch=branch, trunk=trunk, latent=latent)

    def layer_shapes(self):
        """Weight shapes ``(fan_in, fan_out)`` grouped per network."""
        if self.variant == MLP:
            sizes = [self.input_dim + self.coord_dim, *self.hidden, self.outputs]
            return {"mlp": list(zip(sizes[:-1], sizes[1:]))}
        if self.variant == BRANCH_TRUNK:
            b = [self.input_dim, *self.branch, self.outputs * self.latent]
            t = [self.coord_dim, *self.trunk, self.latent]
            return {"branch": list(zip(b[:-1], b[1:])), "trunk": list(zip(t[:-1], t[1:]))}
        return {}

    @property
    def n_params(self):
        n = sum(fi * fo + fo for shapes in self.layer_shapes().values() for fi, fo in shapes)
        if self.variant == BRANCH_TRUNK:
            n += self.outputs
        return n

    def to_dict(self):
        return dict(
            variant=self.variant, input_dim=self.input_dim, coord_dim=self.coord_dim, outputs=self.outputs,
            hidden=list(self.hidden), branch=list(self.branch), trunk=list(self.trunk), latent=self.latent,
        )

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _unpack(arch, theta):
    """Split ``theta`` into ``{net: [(W, b), ...]}`` views (plus the output bias for branch-trunk)."""
    nets, k = {}, 0
    for name, shapes in arch.layer_shapes().items():
        layers = []
        for fi, fo in shapes:
            W = theta[k:k + fi * fo].reshape(fi, fo)
            k += fi * fo
            b = theta[k:k + fo]
            k += fo
            layers.append((W, b))
        nets[name] = layers
    if arch.variant == BRANCH_TRUNK:
        nets["bias"] = theta[k:k + arch.outputs]
    return nets


def _dense_forward(layers, X):
    """tanh on hidden layers, linear output; returns output and the list of activations."""
    acts = [X]
    h = X
    for li, (W, b) in enumerate(layers):
        z = h @ W + b
        h = np.tanh(z) if li < len(layers) - 1 else z
        acts.append(h)
    return h, acts


def _dense_backward(layers, acts, dout, grads):
    """Accumulate weight gradients into ``grads`` (same layout as ``layers``); returns d(input)."""
    dz = dout
    for li in range(len(layers) - 1, -1, -1):
        W, _ = layers[li]
        a_prev = acts[li]
        gW, gb = grads[li]
        gW += a_prev.T @ dz
        gb += dz.sum(axis=0)
        da = dz @ W.T
        if li > 0:
            dz = da * (1.0 - acts[li] ** 2)
    return da


@dataclass(frozen=True)
class MeanFunction:
    arch: MeanArchitecture
    theta: np.ndarray

    def __post_init__(self):
        th = np.asarray(self.theta, dtype=float).ravel().copy()
        if th.size != self.arch.n_params:
            raise DimensionMismatch(f"theta has {th.size} entries, architecture needs {self.arch.n_params}")
        th.setflags(write=False)
        object.__setattr__(self, "theta", th)

    @property
    def variant(self):
        return self.arch.variant

    @property
    def outputs(self):
        return self.arch.outputs

    def with_theta(self, theta):
        return MeanFunction(self.arch, theta)

    def _check(self, U, Y):
        U = np.atleast_2d(np.asarray(U, dtype=float))
        Y = np.asarray(Y, dtype=float)
        if Y.ndim == 1:
            Y = Y[:, None]
        if U.shape[1] != self.arch.input_dim or Y.shape[1] != self.arch.coord_dim:
            raise DimensionMismatch(
                f"mean expects inputs with {self.arch.input_dim} features and points with "
                f"{self.arch.coord_dim} coordinates, got {U.shape} and {Y.shape}"
            )
        return U, Y

    def forward(self, U, Y):
        """Evaluate on all pairs; returns ``(M, cache)`` with ``M`` of shape ``(S, q, N)``."""
        U, Y = self._check(U, Y)
        N, q, S = U.shape[0], Y.shape[0], self.arch.outputs
        if self.variant == ZERO:
            return np.zeros((S, q, N)), (U, Y)
        nets = _unpack(self.arch, self.theta)
        if self.variant == MLP:
            layers = nets["mlp"]
            p = self.arch.input_dim
            W0, b0 = layers[0]
            z0 = (U @ W0[:p])[:, None, :] + (Y @ W0[p:])[None, :, :] + b0
            if len(layers) == 1:
                out = z0
                acts = [None, z0]
            else:
                h = np.tanh(z0)
                rest, rest_acts = _dense_forward(layers[1:], h)
                out = rest
                acts = [None] + rest_acts
            return np.ascontiguousarray(out.transpose(2, 1, 0)), (U, Y, nets, acts)
        bo, bacts = _dense_forward(nets["branch"], U)
        to, tacts = _dense_forward(nets["trunk"], Y)
        B = bo.reshape(N, S, self.arch.latent)
        M = np.empty((S, q, N))
        for s in range(S):
            np.matmul(to, B[:, s, :].T, out=M[s])
            M[s] += nets["bias"][s]
        return M, (U, Y, nets, bacts, tacts, B, to)

    def backward(self, cache, dM):
        """Gradient of ``sum(dM * M)`` with respect to ``theta``."""
        S = self.arch.outputs
        grad = np.zeros_like(self.theta)
        if self.variant == ZERO:
            return grad
        U, Y = cache[0], cache[1]
        dM = np.asarray(dM, dtype=float)
        if dM.shape != (S, Y.shape[0], U.shape[0]):
            raise DimensionMismatch(f"dL/dM has shape {dM.shape}, expected {(S, Y.shape[0], U.shape[0])}")
        gnets = _unpack(self.arch, grad)
        nets = cache[2]
        if self.variant == MLP:
            acts = cache[3]
            layers, glayers = nets["mlp"], gnets["mlp"]
            p = self.arch.input_dim
            dz = dM.transpose(2, 1, 0)  # (N, q, S)
            if len(layers) > 1:
                L = len(layers)
                for li in range(L - 1, 0, -1):
                    W, _ = layers[li]
                    a_prev = acts[li]
                    h = a_prev.shape[-1]
                    gW, gb = glayers[li]
                    gW += a_prev.reshape(-1, h).T @ dz.reshape(-1, dz.shape[-1])
                    gb += dz.reshape(-1, dz.shape[-1]).sum(axis=0)
                    dz = (dz @ W.T) * (1.0 - a_prev ** 2)
            gW0, gb0 = glayers[0]
            gW0[:p] += U.T @ dz.sum(axis=1)
            gW0[p:] += Y.T @ dz.sum(axis=0)
            gb0 += dz.sum(axis=(0, 1))
            return grad
        bacts, tacts, B, to = cache[3:]
        N, q, K = U.shape[0], Y.shape[0], self.arch.latent
        dB = np.empty((N, S, K))
        dT = np.zeros((q, K))
        for s in range(S):
            dB[:, s, :] = dM[s].T @ to
            dT += dM[s] @ B[:, s, :]
        dB = dB.reshape(N, S * K)
        gnets["bias"] += dM.sum(axis=(1, 2))
        _dense_backward(nets["branch"], bacts, dB, gnets["branch"])
        _dense_backward(nets["trunk"], tacts, dT, gnets["trunk"])
        return grad

    def to_dict(self):
        return self.arch.to_dict()


def mean_eval(m: MeanFunction, U, Y):
    """Mean evaluations on every (sample, grid point) pair, shape ``(S, q, N)``."""
    return m.forward(U, Y)[0]


def mean_grad_params(m: MeanFunction, U, Y, dL_dM):
    _, cache = m.forward(U, Y)
    return m.backward(cache, dL_dM)


def mean_init(arch: MeanArchitecture, seed: int = 0) -> MeanFunction:
    """Glorot-uniform weights, zero biases, deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    theta = np.zeros(arch.n_params)
    for layers in _unpack(arch, theta).values():
        if isinstance(layers, np.ndarray):
            continue
        for W, _ in layers:
            limit = np.sqrt(6.0 / (W.shape[0] + W.shape[1]))
            W[...] = rng.uniform(-limit, limit, size=W.shape)
    return MeanFunction(arch, theta)


def zero_mean(input_dim, coord_dim, outputs=1):
    return MeanFunction(MeanArchitecture.zero(input_dim, coord_dim, outputs), np.zeros(0))


def _dense_flops(shapes, rows, activate_last=False):
    total = 0
    for li, (fi, fo) in enumerate(shapes):
        total += rows * fo * (2 * fi - 1) + rows * fo
        if li < len(shapes) - 1 or activate_last:
            total += rows * fo
    return total


def forward_flops(arch: MeanArchitecture, m: int) -> int:
    """Floating point operations of one forward pass for a single input function at ``m`` points.

    Matrix products ``(a x b)(b x c)`` count ``a c (2b - 1)``; each bias add and
    each activation counts one per entry.
    """
    if arch.variant == ZERO:
        return 0
    shapes = arch.layer_shapes()
    if arch.variant == MLP:
        return _dense_flops(shapes["mlp"], m)
    S, K = arch.outputs, arch.latent
    return (
        _dense_flops(shapes["branch"], 1)
        + _dense_flops(shapes["trunk"], m)
        + m * S * (2 * K - 1)
        + m * S
    )
