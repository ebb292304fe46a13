"""Echo-state reservoir computer with an augmented quadratic readout.

The reservoir is a fixed random tanh network::

    h_t = tanh(W_in o_t + W_hh h_{t-1})

and only the linear readout ``o_{t+1} = W_out aug(h_t)`` is trained, by
ridge regression accumulated over time batches.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DegenerateReservoirError, InvalidDimensionError, RankDeficiencyError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ReservoirParams:
    """Hyperparameters of a reservoir computer.

    ``d_in`` defaults to ``d_o``; parallel members use a wider input than output.
    ``noise_level`` is a fraction of the per-component standard deviation.
    """

    d_h: int
    d_o: int
    degree: float = 10.0
    rho: float = 0.6
    omega: float = 0.5
    eta: float = 1e-6
    noise_level: float = 0.0
    seed: int = 0
    n_warmup: int = 2000
    d_in: int | None = None

    def __post_init__(self):
        if self.d_h < 2 or self.d_h % 2:
            raise ValueError(f"d_h must be even and >= 2, got {self.d_h}")
        if self.rho <= 0:
            raise ValueError("rho must be positive")
        if self.degree < 1:
            raise ValueError("degree must be >= 1")
        if self.eta < 0:
            raise ValueError("eta must be non-negative")
        if self.d_in is None:
            object.__setattr__(self, "d_in", self.d_o)


@dataclass
class ReservoirModel:
    W_in: np.ndarray
    W_hh: sp.csr_matrix
    W_out: np.ndarray
    params: ReservoirParams
    trained: bool = False

    @property
    def d_h(self):
        return self.W_in.shape[0]

    @property
    def d_in(self):
        return self.W_in.shape[1]

    @property
    def d_o(self):
        return self.W_out.shape[0]

    def zero_state(self, batch=None):
        shape = (self.d_h,) if batch is None else (batch, self.d_h)
        return np.zeros(shape)

    def readout(self, h):
        return augment_hidden(h) @ self.W_out.T

    def step(self, o, h):
        """Advance one step; returns (prediction of next observation, new state)."""
        h = rc_step(self, o, h)
        return self.readout(h), h

    def jacobians(self, o, h):
        """Partial Jacobians of the step at (o, h).

        Returns ``(J1, J2, J0)`` with ``J1 = d h'/d h``, ``J2 = d h'/d o`` and
        ``J0 = d readout/d h`` evaluated at ``h``.
        """
        h_new = rc_step(self, o, h)
        s = 1.0 - h_new**2
        J1 = s[:, None] * self.W_hh.toarray()
        J2 = s[:, None] * self.W_in
        J0 = self.W_out * _augment_derivative(h)[None, :]
        return J1, J2, J0

    def closed_loop_tangent(self, h, dH):
        """Closed-loop step ``h -> f(readout(h), h)`` and its JVP on the columns of dH."""
        o = self.readout(h)
        h_new = rc_step(self, o, h)
        do = self.W_out @ (_augment_derivative(h)[:, None] * dH)
        dpre = self.W_in @ do + self.W_hh @ dH
        return h_new, (1.0 - h_new**2)[:, None] * dpre

    def nbytes(self):
        return self.W_in.nbytes + self.W_out.nbytes + self.W_hh.data.nbytes + self.W_hh.indices.nbytes


@dataclass
class RidgeAccumulator:
    """Running sums ``Hbar = H^T H`` and ``Ybar = Y^T H`` over time batches."""

    Hbar: np.ndarray
    Ybar: np.ndarray
    count: int = 0

    @classmethod
    def empty(cls, d_h, d_o):
        return cls(np.zeros((d_h, d_h)), np.zeros((d_o, d_h)), 0)


# ----------------------------------------------------------------------------


def power_iteration(W, max_iter=1000, tol=1e-8):
    """Largest eigenvalue magnitude by power iteration from a vector of ones.

    Returns ``(estimate, converged)``. The estimate is the norm growth factor
    of the last iterate; it does not converge when the dominant eigenvalue is
    a complex pair, which the caller has to handle.
    """
    x = np.ones(W.shape[0]) / np.sqrt(W.shape[0])
    est = 0.0
    for _ in range(max_iter):
        y = W @ x
        norm = np.linalg.norm(y)
        if norm == 0.0 or not np.isfinite(norm):
            return 0.0, False
        new = norm
        x = y / norm
        if abs(new - est) <= tol * new:
            return new, True
        est = new
    return est, False


def spectral_radius(W, method="auto"):
    """Absolute value of the largest-magnitude eigenvalue of ``W``.

    ``method`` is ``"dense"``, ``"arnoldi"``, ``"power"`` or ``"auto"``
    (dense below 300 rows, Arnoldi above).
    """
    n = W.shape[0]
    if sp.issparse(W) and W.nnz == 0 or not sp.issparse(W) and not np.any(W):
        raise DegenerateReservoirError("recurrent matrix is identically zero")
    if method == "auto":
        method = "dense" if n < 300 else "arnoldi"
    if method == "dense":
        A = W.toarray() if sp.issparse(W) else np.asarray(W)
        return float(np.max(np.abs(np.linalg.eigvals(A))))
    if method == "power":
        est, ok = power_iteration(W)
        if not ok:
            raise DegenerateReservoirError("power iteration did not converge")
        return est
    if method == "arnoldi":
        try:
            vals = spla.eigs(
                W.astype(np.float64), k=1, which="LM", v0=np.ones(n), tol=1e-10, maxiter=20 * n
            )[0]
        except spla.ArpackNoConvergence as err:
            raise DegenerateReservoirError("Arnoldi iteration did not converge") from err
        return float(np.abs(vals[0]))
    raise ValueError(f"unknown method {method!r}")


def _sparse_random(n, degree, rng):
    # Erdos-Renyi pattern: every entry present independently with prob degree/n
    p = min(1.0, degree / n)
    count = rng.binomial(n * n, p)
    flat = np.sort(rng.choice(n * n, size=count, replace=False))
    vals = rng.uniform(-1.0, 1.0, size=count)
    return sp.csr_matrix((vals, (flat // n, flat % n)), shape=(n, n))


def build_reservoir(params: ReservoirParams) -> ReservoirModel:
    rng = np.random.default_rng(params.seed)
    W_in = rng.uniform(-params.omega, params.omega, size=(params.d_h, params.d_in))
    W_hh = _sparse_random(params.d_h, params.degree, rng)
    radius = spectral_radius(W_hh)
    if not radius > 1e-12:
        raise DegenerateReservoirError(f"recurrent matrix has spectral radius {radius:g}")
    W_hh = (W_hh * (params.rho / radius)).tocsr()
    W_out = np.zeros((params.d_o, params.d_h))
    return ReservoirModel(W_in, W_hh, W_out, params, trained=False)


def rc_step(model, o_t, h_prev):
    """``tanh(W_in o + W_hh h)``; accepts a single vector or a batch of rows."""
    o_t = np.asarray(o_t, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    if o_t.shape[-1] != model.W_in.shape[1] or h_prev.shape[-1] != model.W_in.shape[0]:
        raise InvalidDimensionError(
            f"expected input {model.W_in.shape[1]} and state {model.W_in.shape[0]}, "
            f"got {o_t.shape[-1]} and {h_prev.shape[-1]}"
        )
    rec = model.W_hh @ h_prev.T
    return np.tanh(o_t @ model.W_in.T + rec.T)


def augment_hidden(h):
    """Copy the first half of the units and square the second half."""
    h = np.asarray(h, dtype=np.float64)
    n = h.shape[-1]
    if n % 2:
        raise InvalidDimensionError("augmentation needs an even state size")
    out = h.copy()
    out[..., n // 2 :] **= 2
    return out


def _augment_derivative(h):
    n = h.shape[-1]
    d = np.ones_like(h)
    d[..., n // 2 :] = 2.0 * h[..., n // 2 :]
    return d


def accumulate_batch(acc: RidgeAccumulator, H_b, Y_b) -> RidgeAccumulator:
    """Add one batch of augmented states and targets to the running sums."""
    H_b = np.asarray(H_b, dtype=np.float64)
    Y_b = np.asarray(Y_b, dtype=np.float64)
    if H_b.shape[0] == 0:
        return acc
    if H_b.shape[1] != acc.Hbar.shape[0] or Y_b.shape != (H_b.shape[0], acc.Ybar.shape[0]):
        raise InvalidDimensionError(
            f"batch shapes {H_b.shape}, {Y_b.shape} do not fit accumulator "
            f"({acc.Hbar.shape[0]} states, {acc.Ybar.shape[0]} outputs)"
        )
    acc.Hbar += H_b.T @ H_b
    acc.Ybar += Y_b.T @ H_b
    acc.count += H_b.shape[0]
    return acc


def solve_readout(acc: RidgeAccumulator, eta: float):
    """Solve ``W_out (Hbar + eta I) = Ybar`` by Cholesky factorization."""
    n = acc.Hbar.shape[0]
    A = acc.Hbar + eta * np.eye(n)
    A = 0.5 * (A + A.T)
    if eta == 0:
        ev = np.linalg.eigvalsh(A)
        cutoff = n * np.finfo(float).eps * max(ev[-1], 0.0)
        deficient = int(np.sum(ev <= cutoff))
        if deficient:
            raise RankDeficiencyError(deficient, n)
    try:
        factor = scipy.linalg.cho_factor(A, lower=True, check_finite=True)
    except np.linalg.LinAlgError as err:
        ev = np.linalg.eigvalsh(A)
        deficient = int(np.sum(ev <= n * np.finfo(float).eps * max(ev[-1], 0.0)))
        raise RankDeficiencyError(max(deficient, 1), n) from err
    W = scipy.linalg.cho_solve(factor, acc.Ybar.T).T
    # one step of iterative refinement
    resid = acc.Ybar - W @ A
    W += scipy.linalg.cho_solve(factor, resid.T).T
    return W


def harvest_states(model, inputs, h0=None, chunk=1000):
    """Teacher-force ``inputs`` (T, d_in) and yield ``(start, states)`` chunks."""
    h = model.zero_state() if h0 is None else np.array(h0, dtype=np.float64)
    W_hh = model.W_hh
    for start in range(0, len(inputs), chunk):
        drive = inputs[start : start + chunk] @ model.W_in.T
        H = np.empty_like(drive)
        for t in range(len(drive)):
            h = np.tanh(drive[t] + W_hh @ h)
            H[t] = h
        yield start, H


def fit_readout(model, inputs, targets, batch_size=1000, noise_std=None, rng=None):
    """Train the readout of ``model`` mapping ``inputs[t]`` to ``targets[t]``.

    The first ``params.n_warmup`` reservoir states are driven but not regressed.
    ``inputs`` and ``targets`` may also be lists of sequences; each is driven
    from a zero state and all contribute to one regression.
    """
    if isinstance(inputs, (list, tuple)):
        seqs = list(zip(inputs, targets))
    else:
        seqs = [(inputs, targets)]
    acc = None
    for x, y in seqs:
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if len(x) != len(y):
            raise InvalidDimensionError("inputs and targets differ in length")
        if acc is None:
            acc = RidgeAccumulator.empty(model.d_h, y.shape[1])
        if noise_std is not None and np.any(np.asarray(noise_std) > 0):
            rng = np.random.default_rng() if rng is None else rng
            x = x + rng.standard_normal(x.shape) * noise_std
        n_w = min(model.params.n_warmup, max(len(x) - 1, 0))
        for start, H in harvest_states(model, x, chunk=batch_size):
            lo = max(n_w - start, 0)
            if lo >= len(H):
                continue
            sl = slice(start + lo, start + len(H))
            accumulate_batch(acc, augment_hidden(H[lo:]), y[sl])
    if acc is None or acc.count == 0:
        raise ValueError("no training samples left after warm-up")
    W_out = solve_readout(acc, model.params.eta)
    if not np.all(np.isfinite(W_out)):
        raise FloatingPointError("readout contains non-finite entries")
    return replace(model, W_out=W_out, trained=True)


def train_rc(model, dataset, batch_size=1000):
    """Teacher-forced ridge training on the training split of ``dataset``."""
    train = dataset.train
    if len(train) < 2:
        raise ValueError("training split is empty")
    if train.shape[1] != model.d_in:
        raise InvalidDimensionError(f"dataset has {train.shape[1]} components, model expects {model.d_in}")
    noise = model.params.noise_level * dataset.std if model.params.noise_level > 0 else None
    rng = np.random.default_rng([model.params.seed, 1])
    return fit_readout(model, train[:-1], train[1:], batch_size, noise, rng)
