"""
Viscous Burgers solvers, ``u_t + (u^2/2)_x = nu u_xx`` on ``[0, 1]``.

Space is discretised with second-order central differences: the conservative
flux derivative ``(f_{i+1} - f_{i-1}) / 2dx`` and the three-point Laplacian.
The Laplacian is diagonal in the discrete Fourier basis (periodic case) and in
the type-I sine basis (Dirichlet case), so the stiff diffusion term is
handled exactly by exponential time differencing and only the advective term
is sampled at the four RK4 stages (ETDRK4). The step is then limited by the
advective CFL number alone. An integrating-factor RK4 would be simpler but
loses an order whenever the flux derivative does not vanish at the held
boundary values, which is the generic Dirichlet case.
"""

from __future__ import annotations

import numpy as np
from scipy import fft
from scipy.interpolate import CubicSpline

from ..errors import UnstableStep
from .dataset import OperatorDataset
from .grf import GrfConfig, grf_sample

PERIODIC, DIRICHLET = "periodic", "dirichlet"
DEFAULT_CFL = 0.5
_GROWTH_LIMIT = 1.5  # continuous problem obeys a maximum principle


_CONTOUR = 32


def _etdrk4(v_hat, nonlinear, lam, dt, n_steps, bound):
    """Advance ``v' = L v + N(v)`` with diagonal ``L = lam`` (ETDRK4).

    The phi-function weights are averaged over a small complex contour so they
    stay accurate as ``dt * lam`` approaches zero.
    """
    E, E2 = np.exp(dt * lam), np.exp(0.5 * dt * lam)
    r = np.exp(1j * np.pi * (np.arange(1, _CONTOUR + 1) - 0.5) / _CONTOUR)
    LR = dt * lam[:, None] + r[None, :]
    eLR = np.exp(LR)
    Q = dt * np.mean((np.exp(0.5 * LR) - 1.0) / LR, axis=1).real
    f1 = dt * np.mean((-4.0 - LR + eLR * (4.0 - 3.0 * LR + LR**2)) / LR**3, axis=1).real
    f2 = dt * np.mean((2.0 + LR + eLR * (LR - 2.0)) / LR**3, axis=1).real
    f3 = dt * np.mean((-4.0 - 3.0 * LR - LR**2 + eLR * (4.0 - LR)) / LR**3, axis=1).real
    for _ in range(n_steps):
        Nv = nonlinear(v_hat)
        a = E2 * v_hat + Q * Nv
        Na = nonlinear(a)
        b = E2 * v_hat + Q * Na
        Nb = nonlinear(b)
        c = E2 * a + Q * (2.0 * Nb - Nv)
        Nc = nonlinear(c)
        v_hat = E * v_hat + f1 * Nv + 2.0 * f2 * (Na + Nb) + f3 * Nc
        if not np.all(np.isfinite(v_hat)) or np.abs(v_hat).max() > bound:
            return None
    return v_hat


def _steps_for(duration, dx, umax, cfl):
    if duration <= 0:
        return 0, 0.0
    dt_max = cfl * dx / max(umax, 1e-12)
    n = int(np.ceil(duration / dt_max - 1e-12))
    return n, duration / n


def solve_burgers_periodic(u0, nu: float, T: float = 1.0, cfl: float = DEFAULT_CFL):
    """Solution at time ``T`` for initial states ``u0`` of shape ``(N, R)`` on ``x_i = i / R``.

    Raises
    ------
    UnstableStep
        If the solution blows up even after one step refinement.
    """
    u0 = np.atleast_2d(np.asarray(u0, dtype=float))
    R = u0.shape[1]
    dx = 1.0 / R
    k = np.arange(R // 2 + 1)
    lam = -nu * (4.0 / dx**2) * np.sin(np.pi * k / R) ** 2
    ddx = 1j * np.sin(2.0 * np.pi * k / R) / dx

    def nonlinear(uh):
        u = fft.irfft(uh, n=R, axis=1)
        return -ddx * fft.rfft(0.5 * u * u, axis=1)

    umax = float(np.abs(u0).max())
    n, dt = _steps_for(T, dx, umax, cfl)
    if n == 0:
        return u0.copy()
    u_hat = fft.rfft(u0, axis=1)
    bound = _GROWTH_LIMIT * max(np.abs(u_hat).max(), 1e-300)
    for attempt in range(2):
        out = _etdrk4(u_hat, nonlinear, lam, dt, n, bound)
        if out is not None:
            return fft.irfft(out, n=R, axis=1)
        n, dt = 2 * n, dt / 2
    raise UnstableStep(f"periodic Burgers diverged with dt={2 * dt:g} after refinement")


def solve_burgers_dirichlet(u0, nu: float, times, left: float = 0.0, right: float = 1.0,
                            cfl: float = DEFAULT_CFL):
    """Snapshots at ``times`` for initial states ``u0`` of shape ``(N, R + 1)`` on ``x_i = i / R``.

    Boundary values are held at ``left`` and ``right``. Returns shape
    ``(N, len(times), R + 1)``.
    """
    u0 = np.atleast_2d(np.asarray(u0, dtype=float))
    R = u0.shape[1] - 1
    dx = 1.0 / R
    x = np.linspace(0.0, 1.0, R + 1)
    lift = left + (right - left) * x
    k = np.arange(1, R)
    lam = -nu * (4.0 / dx**2) * np.sin(np.pi * k / (2 * R)) ** 2
    pad_l = np.full((u0.shape[0], 1), left)
    pad_r = np.full((u0.shape[0], 1), right)

    def nonlinear(wh):
        w = fft.idst(wh, type=1, norm="ortho", axis=1)
        u = np.hstack([pad_l, w + lift[1:-1], pad_r])
        f = 0.5 * u * u
        return fft.dst(-(f[:, 2:] - f[:, :-2]) / (2.0 * dx), type=1, norm="ortho", axis=1)

    umax = max(float(np.abs(u0).max()), abs(left), abs(right))
    w_hat = fft.dst(u0[:, 1:-1] - lift[1:-1], type=1, norm="ortho", axis=1)
    bound = _GROWTH_LIMIT * max(np.abs(w_hat).max(), np.sqrt(R) * umax, 1e-300)
    out = np.empty((u0.shape[0], len(times), R + 1))
    t_prev = 0.0
    for j, t in enumerate(times):
        n, dt = _steps_for(t - t_prev, dx, umax, cfl)
        if n:
            for attempt in range(2):
                nxt = _etdrk4(w_hat, nonlinear, lam, dt, n, bound)
                if nxt is not None:
                    break
                n, dt = 2 * n, dt / 2
            else:
                raise UnstableStep(f"Dirichlet Burgers diverged with dt={2 * dt:g} after refinement")
            w_hat = nxt
        w = fft.idst(w_hat, type=1, norm="ortho", axis=1)
        out[:, j, 0], out[:, j, -1] = left, right
        out[:, j, 1:-1] = w + lift[1:-1]
        t_prev = t
    return out


def _fourier_upsample(U, R):
    p = U.shape[1]
    Uh = fft.rfft(U, axis=1)
    if p % 2 == 0:
        Uh[:, -1] *= 0.5  # split the Nyquist mode symmetrically
    return fft.irfft(Uh, n=R, axis=1) * (R / p)


def _default_resolution(sizes, multiple):
    base = int(np.lcm.reduce([int(s) for s in multiple]))
    target = 4 * max(sizes)
    return base * int(np.ceil(target / base))


def gen_burgers(variant: str, N: int, p: int, q, nu: float = 0.1, resolution: int | None = None,
                seed: int = 0, length_scale: float | None = None, variance: float = 1.0,
                T: float = 1.0) -> OperatorDataset:
    """Burgers operator datasets.

    ``periodic``
        Input: periodic GRF initial condition on ``p`` points of ``[0, 1)``.
        Output: solution at time ``T`` on ``q`` points of ``[0, 1)``. The IC is
        the trigonometric interpolant of the input samples.
    ``dirichlet``
        Input: GRF initial condition on ``p`` points of ``[0, 1]`` pinned to the
        boundary values ``v(0) = 0`` and ``v(1) = 1``. Output: solution on a
        cell-centred ``nx x nt`` space-time grid over ``[0, 1]^2`` (``q = nx * nt``,
        pass an int square or a tuple). The IC is the cubic spline through the
        input samples.
    """
    variant = variant.lower().replace("burgers-", "")
    meta = {"name": f"burgers-{variant}", "seed": int(seed), "N": int(N), "p": int(p), "nu": float(nu)}
    if variant == PERIODIC:
        q = int(q)
        R = resolution or _default_resolution([p, q], [p, q])
        if R % p or R % q or R < 4 * max(p, q):
            raise ValueError(f"resolution {R} must be a multiple of p and q and at least 4 max(p, q)")
        ls = length_scale or 0.25
        x_in = np.arange(p) / p
        U = grf_sample(GrfConfig(ls, variance, x_in, seed, periodic=True), N)
        uT = solve_burgers_periodic(_fourier_upsample(U, R), nu, T)
        V = uT[:, :: R // q]
        y = (np.arange(q) / q)[:, None]
        meta.update(q=q, resolution=int(R), length_scale=float(ls), variance=float(variance), T=float(T))
        return OperatorDataset(U, y, V.T[None], x_in[:, None], meta)
    if variant == DIRICHLET:
        if np.isscalar(q):
            nx = int(round(np.sqrt(q)))
            if nx * nx != q:
                raise ValueError("q must be a perfect square or an (nx, nt) pair")
            nt = nx
        else:
            nx, nt = (int(a) for a in q)
        R = resolution or 4 * max(p, nx)
        if R < 4 * max(p, nx):
            raise ValueError(f"resolution {R} must be at least 4 max(p, nx)")
        ls = length_scale or 0.2
        x_in = np.linspace(0.0, 1.0, p)
        U = grf_sample(GrfConfig(ls, variance, x_in, seed, pinning=(0.0, 1.0)), N)
        x_fine = np.linspace(0.0, 1.0, R + 1)
        u0 = CubicSpline(x_in, U, axis=1)(x_fine)
        u0[:, 0], u0[:, -1] = 0.0, 1.0
        x_out = (np.arange(nx) + 0.5) / nx
        t_out = (np.arange(nt) + 0.5) / nt
        snaps = solve_burgers_dirichlet(u0, nu, t_out)
        # linear interpolation in x; time-major ordering of the output grid
        j = np.minimum((x_out * R).astype(int), R - 1)
        frac = x_out * R - j
        vals = snaps[:, :, j] * (1 - frac) + snaps[:, :, j + 1] * frac  # (N, nt, nx)
        X, Tt = np.meshgrid(x_out, t_out)
        Y = np.column_stack([X.ravel(), Tt.ravel()])
        V = vals.reshape(N, nt * nx)
        meta.update(q=int(nx * nt), nx=nx, nt=nt, resolution=int(R), length_scale=float(ls),
                    variance=float(variance), bc=[0.0, 1.0])
        return OperatorDataset(U, Y, V.T[None], x_in[:, None], meta)
    raise ValueError(f"unknown Burgers variant {variant!r}")
