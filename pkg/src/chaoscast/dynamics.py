"""Ground-truth trajectories and tangent dynamics.

Lorenz-96 is integrated with classical RK4; Kuramoto-Sivashinsky is solved
pseudo-spectrally with ETDRK4 (exponential time differencing, 4th order),
with the phi-functions evaluated by contour averaging.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .data import TimeSeriesDataset
from .errors import InvalidDimensionError, NonFiniteStateError, SimulationBlowupError
from .lyapunov import LyapunovSpectrum, kaplan_yorke, qr_positive

log = logging.getLogger(__name__)

BLOWUP = 1e6


@dataclass(frozen=True)
class Lorenz96Config:
    J: int = 40
    F: float = 8.0
    dt: float = 0.01
    t_transient: float = 1000.0
    t_total: float = 2000.0
    seed: int = 0
    train_fraction: float = 0.5

    def __post_init__(self):
        if self.J < 4:
            raise InvalidDimensionError(f"Lorenz-96 needs J >= 4, got {self.J}")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if not self.t_transient < self.t_total:
            raise ValueError("t_transient must be smaller than t_total")


@dataclass(frozen=True)
class KSConfig:
    L: float = 200.0
    nu: float = 1.0
    D: int = 512
    dt: float = 0.25
    t_transient: float = 1e4
    t_total: float = 6e4
    seed: int = 0
    train_fraction: float = 0.5

    def __post_init__(self):
        if self.D < 8 or self.D % 2:
            raise InvalidDimensionError(f"KS grid size must be even and >= 8, got {self.D}")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if not self.t_transient < self.t_total:
            raise ValueError("t_transient must be smaller than t_total")

    @property
    def dx(self):
        # periodic grid: node D would duplicate node 0
        return self.L / self.D


# ----------------------------------------------------------------------------
# Lorenz-96


def lorenz96_rhs(state, F):
    """Lorenz-96 tendency ``(x[j+1] - x[j-2]) x[j-1] - x[j] + F``, periodic in j.

    Works on the last axis, so a stack of states can be passed at once.
    """
    x = np.asarray(state, dtype=np.float64)
    if x.shape[-1] < 4:
        raise InvalidDimensionError(f"Lorenz-96 state needs >= 4 sites, got {x.shape[-1]}")
    return (np.roll(x, -1, axis=-1) - np.roll(x, 2, axis=-1)) * np.roll(x, 1, axis=-1) - x + F


def lorenz96_jvp(state, V):
    """Apply the Lorenz-96 Jacobian at ``state`` to the columns of ``V`` (J x N)."""
    x = state
    xm1 = np.roll(x, 1)[:, None]
    dx = (np.roll(x, -1) - np.roll(x, 2))[:, None]
    return xm1 * (np.roll(V, -1, axis=0) - np.roll(V, 2, axis=0)) + dx * np.roll(V, 1, axis=0) - V


def lorenz96_jacobian(state):
    """Dense Lorenz-96 Jacobian (J x J)."""
    x = np.asarray(state, dtype=np.float64)
    return lorenz96_jvp(x, np.eye(len(x)))


def rk4_step(rhs: Callable, state, dt: float):
    """One classical fourth-order Runge-Kutta step."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = np.asarray(state, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise NonFiniteStateError("non-finite state passed to rk4_step")
    k1 = rhs(x)
    k2 = rhs(x + 0.5 * dt * k1)
    k3 = rhs(x + 0.5 * dt * k2)
    k4 = rhs(x + dt * k3)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _rk4_tangent_step(x, V, F, dt):
    # differentiates the RK4 map itself, so tangents follow the discrete flow
    f = lambda y: lorenz96_rhs(y, F)
    k1 = f(x)
    K1 = lorenz96_jvp(x, V)
    x2 = x + 0.5 * dt * k1
    k2 = f(x2)
    K2 = lorenz96_jvp(x2, V + 0.5 * dt * K1)
    x3 = x + 0.5 * dt * k2
    k3 = f(x3)
    K3 = lorenz96_jvp(x3, V + 0.5 * dt * K2)
    x4 = x + dt * k3
    k4 = f(x4)
    K4 = lorenz96_jvp(x4, V + dt * K3)
    x_new = x + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    V_new = V + (dt / 6.0) * (K1 + 2 * K2 + 2 * K3 + K4)
    return x_new, V_new


def lorenz96_initial_state(cfg: Lorenz96Config):
    rng = np.random.default_rng(cfg.seed)
    return cfg.F + 1e-3 * rng.standard_normal(cfg.J)


def _check_blowup(x, step):
    if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > BLOWUP:
        raise SimulationBlowupError(f"state magnitude exceeded {BLOWUP:g} at step {step}")


def _make_dataset(values, dt, train_fraction):
    split = int(round(train_fraction * len(values)))
    return TimeSeriesDataset(values, dt, split)


def simulate_lorenz96(cfg: Lorenz96Config, x0=None) -> TimeSeriesDataset:
    """Integrate Lorenz-96 and return the post-transient trajectory sampled every ``dt``."""
    x = lorenz96_initial_state(cfg) if x0 is None else np.array(x0, dtype=np.float64)
    if x.shape != (cfg.J,):
        raise InvalidDimensionError(f"initial state must have shape ({cfg.J},)")
    n_trans = int(round(cfg.t_transient / cfg.dt))
    n_total = int(round(cfg.t_total / cfg.dt))
    rhs = lambda y: lorenz96_rhs(y, cfg.F)
    out = np.empty((n_total - n_trans, cfg.J))
    for step in range(n_total):
        x = rk4_step(rhs, x, cfg.dt)
        if step % 100 == 0:
            _check_blowup(x, step)
        if step >= n_trans:
            out[step - n_trans] = x
    _check_blowup(out, n_total)
    return _make_dataset(out, cfg.dt, cfg.train_fraction)


# ----------------------------------------------------------------------------
# Kuramoto-Sivashinsky


class ETDRK4Solver:
    """Pseudo-spectral ETDRK4 integrator for u_t = -nu u_xxxx - u_xx - u u_x.

    The state is carried as the real FFT of u on ``D`` periodic nodes.
    The quadratic term is dealiased with the 2/3 rule.
    """

    def __init__(self, L, D, dt, nu=1.0, contour_points=32):
        self.L, self.D, self.dt, self.nu = float(L), int(D), float(dt), float(nu)
        n = np.arange(D // 2 + 1)
        k = 2.0 * np.pi * n / L
        self.k = k
        self.lin = k**2 - nu * k**4
        self.dealias = n < D / 3.0
        self.g = -0.5j * k * self.dealias

        h = dt
        self.E = np.exp(h * self.lin)
        self.E2 = np.exp(0.5 * h * self.lin)
        M = contour_points
        r = np.exp(1j * np.pi * (np.arange(1, M + 1) - 0.5) / M)
        LR = h * self.lin[:, None] + r[None, :]
        eLR = np.exp(LR)
        self.Q = h * np.real(np.mean((np.exp(LR / 2) - 1) / LR, axis=1))
        self.f1 = h * np.real(np.mean((-4 - LR + eLR * (4 - 3 * LR + LR**2)) / LR**3, axis=1))
        self.f2 = h * np.real(np.mean((2 + LR + eLR * (-2 + LR)) / LR**3, axis=1))
        self.f3 = h * np.real(np.mean((-4 - 3 * LR - LR**2 + eLR * (4 - LR)) / LR**3, axis=1))

    @property
    def grid(self):
        return self.L * np.arange(self.D) / self.D

    def to_spectral(self, u):
        return np.fft.rfft(u, axis=-1)

    def to_physical(self, v):
        return np.fft.irfft(v, n=self.D, axis=-1)

    def nonlinear(self, v):
        u = self.to_physical(v * self.dealias)
        return self.g * np.fft.rfft(u * u, axis=-1)

    def nonlinear_jvp(self, v, w):
        """Derivative of :meth:`nonlinear` at ``v`` along each row of ``w``."""
        u = self.to_physical(v * self.dealias)
        uw = self.to_physical(w * self.dealias)
        return self.g * np.fft.rfft(2.0 * u * uw, axis=-1)

    def step(self, v):
        Nv = self.nonlinear(v)
        a = self.E2 * v + self.Q * Nv
        Na = self.nonlinear(a)
        b = self.E2 * v + self.Q * Na
        Nb = self.nonlinear(b)
        c = self.E2 * a + self.Q * (2.0 * Nb - Nv)
        Nc = self.nonlinear(c)
        return self.E * v + Nv * self.f1 + 2.0 * (Na + Nb) * self.f2 + Nc * self.f3

    def step_tangent(self, v, W):
        """Advance ``v`` and the rows of ``W`` through the linearized ETDRK4 map."""
        Nv = self.nonlinear(v)
        dNv = self.nonlinear_jvp(v, W)
        a = self.E2 * v + self.Q * Nv
        da = self.E2 * W + self.Q * dNv
        Na = self.nonlinear(a)
        dNa = self.nonlinear_jvp(a, da)
        b = self.E2 * v + self.Q * Na
        db = self.E2 * W + self.Q * dNa
        Nb = self.nonlinear(b)
        dNb = self.nonlinear_jvp(b, db)
        c = self.E2 * a + self.Q * (2.0 * Nb - Nv)
        dc = self.E2 * da + self.Q * (2.0 * dNb - dNv)
        Nc = self.nonlinear(c)
        dNc = self.nonlinear_jvp(c, dc)
        v_new = self.E * v + Nv * self.f1 + 2.0 * (Na + Nb) * self.f2 + Nc * self.f3
        W_new = self.E * W + dNv * self.f1 + 2.0 * (dNa + dNb) * self.f2 + dNc * self.f3
        return v_new, W_new


def ks_initial_state(cfg: KSConfig):
    rng = np.random.default_rng(cfg.seed)
    u = 1e-3 * rng.standard_normal(cfg.D)
    return u - u.mean()


def integrate_ks(u0, L, D, dt, n_steps, nu=1.0, keep_every=1):
    """Run ETDRK4 for ``n_steps`` and return the stacked physical states."""
    solver = ETDRK4Solver(L, D, dt, nu)
    v = solver.to_spectral(np.asarray(u0, dtype=np.float64))
    out = []
    for step in range(1, n_steps + 1):
        v = solver.step(v)
        if step % keep_every == 0:
            out.append(solver.to_physical(v))
    return np.array(out).reshape(-1, D)


def simulate_ks(cfg: KSConfig, u0=None) -> TimeSeriesDataset:
    """Solve Kuramoto-Sivashinsky and return post-transient samples every ``dt``."""
    u = ks_initial_state(cfg) if u0 is None else np.array(u0, dtype=np.float64)
    if u.shape != (cfg.D,):
        raise InvalidDimensionError(f"initial field must have shape ({cfg.D},)")
    solver = ETDRK4Solver(cfg.L, cfg.D, cfg.dt, cfg.nu)
    v = solver.to_spectral(u)
    n_trans = int(round(cfg.t_transient / cfg.dt))
    n_total = int(round(cfg.t_total / cfg.dt))
    out = np.empty((n_total - n_trans, cfg.D))
    for step in range(n_total):
        v = solver.step(v)
        if step % 100 == 0:
            _check_blowup(np.abs(v) / cfg.D, step)
        if step >= n_trans:
            out[step - n_trans] = solver.to_physical(v)
    _check_blowup(out, n_total)
    return _make_dataset(out, cfg.dt, cfg.train_fraction)


# ----------------------------------------------------------------------------
# Lyapunov spectra of the true systems


def true_lyapunov_spectrum(
    system,
    n_exponents,
    T_n=10,
    T=500.0,
    transient=None,
    tangent_transient=10.0,
    check_every=10,
    tol=1e-2,
    seed=0,
):
    """Lyapunov spectrum from the tangent dynamics with periodic QR re-orthonormalization.

    Parameters
    ----------
    system : Lorenz96Config or KSConfig
    n_exponents : int
    T_n : int
        Steps between re-orthonormalizations.
    T : float
        Averaging horizon in time units.
    transient : float, optional
        Time integrated before tangents are started; ``system.t_transient`` by default.
    tangent_transient : float
        Time over which tangent vectors are aligned but not yet averaged.
    check_every : int
        Number of QR steps between recorded estimates.
    tol : float
        The estimate counts as converged when the last recorded estimate moved
        less than ``tol`` (max-norm) over the final tenth of the horizon.
    """
    if isinstance(system, Lorenz96Config):
        dim = system.J
    elif isinstance(system, KSConfig):
        dim = system.D - 1  # mean mode is conserved and excluded
    else:
        raise TypeError(f"unsupported system {type(system).__name__}")
    if not 1 <= n_exponents <= dim:
        raise InvalidDimensionError(f"n_exponents must be in [1, {dim}]")
    if transient is None:
        transient = system.t_transient
    dt = system.dt
    rng = np.random.default_rng(seed)

    if isinstance(system, Lorenz96Config):
        x = lorenz96_initial_state(system)
        rhs = lambda y: lorenz96_rhs(y, system.F)
        for _ in range(int(round(transient / dt))):
            x = rk4_step(rhs, x, dt)
        Q, _ = qr_positive(rng.standard_normal((dim, n_exponents)))

        def advance(x, Q):
            return _rk4_tangent_step(x, Q, system.F, dt)

        def orthonormalize(Q):
            return qr_positive(Q)

        state, basis = x, Q
    else:
        solver = ETDRK4Solver(system.L, system.D, dt, system.nu)
        v = solver.to_spectral(ks_initial_state(system))
        for _ in range(int(round(transient / dt))):
            v = solver.step(v)
        W0 = rng.standard_normal((n_exponents, system.D))
        W0 -= W0.mean(axis=1, keepdims=True)
        Qr, _ = qr_positive(W0.T)

        def advance(v, W):
            return solver.step_tangent(v, W)

        def orthonormalize(W):
            q, r = qr_positive(solver.to_physical(W).T)
            return solver.to_spectral(q.T), r

        state, basis = v, solver.to_spectral(Qr.T)

    n_align = int(round(tangent_transient / dt))
    n_steps = int(round(T / dt))
    log_sum = np.zeros(n_exponents)
    history = []
    for step in range(1, n_align + n_steps + 1):
        state, basis = advance(state, basis)
        if step % T_n == 0 or step == n_align + n_steps:
            basis, R = orthonormalize(basis)
            if step > n_align:
                log_sum += np.log(np.abs(np.diag(R)))
                if (step - n_align) % (T_n * check_every) == 0:
                    history.append(np.sort(log_sum / ((step - n_align) * dt))[::-1])
        elif step == n_align:
            basis, _ = orthonormalize(basis)
        if step % 1000 == 0 and not np.all(np.isfinite(basis)):
            raise SimulationBlowupError("tangent vectors became non-finite")
    exps = np.sort(log_sum / (n_steps * dt))[::-1]
    history.append(exps)
    history = np.array(history)
    ref = history[max(0, int(0.9 * len(history)) - 1)]
    converged = bool(len(history) > 2 and np.max(np.abs(history[-1] - ref)) < tol)
    return LyapunovSpectrum(exps, converged, history, kaplan_yorke(exps, warn=False))
