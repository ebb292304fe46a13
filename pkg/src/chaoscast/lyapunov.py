"""Lyapunov spectra of trained recurrent surrogates, and the Kaplan-Yorke dimension.

The surrogate is run in closed loop, ``h_t = f(W(h_{t-1}), h_{t-1})`` where
``W`` is the readout, so the tangent map is ``J = J1 + J2 J0`` with

* ``J1 = df/dh`` and ``J2 = df/do`` at ``(readout(h_{t-1}), h_{t-1})``,
* ``J0 = d readout / dh`` at ``h_{t-1}``.

Deviation vectors are pushed through ``J`` and re-orthonormalized by QR every
``T_n`` steps; the logs of the diagonal of ``R`` accumulate into the exponents.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import InvalidDimensionError, LyapunovDivergenceError, UnsupportedModelError

log = logging.getLogger(__name__)


@dataclass
class LyapunovSpectrum:
    exponents: np.ndarray
    converged: bool
    history: np.ndarray
    ky_dimension: float

    def __post_init__(self):
        self.exponents = np.sort(np.asarray(self.exponents, dtype=np.float64))[::-1]

    @property
    def ky_saturated(self):
        return bool(np.all(np.cumsum(self.exponents) > 0))

    def to_csv(self, augment_zeros=None):
        """``index,exponent`` table; ``augment_zeros=(i, n)`` inserts ``n`` zeros at index ``i``."""
        header = "index,exponent"
        rows = self.exponents
        if augment_zeros is not None:
            header += ",augmented"
            at, n = augment_zeros
            aug = np.concatenate([rows[:at], np.zeros(n), rows[at:]])[: len(rows)]
            lines = [f"{i + 1},{a:.12g},{b:.12g}" for i, (a, b) in enumerate(zip(rows, aug))]
        else:
            lines = [f"{i + 1},{a:.12g}" for i, a in enumerate(rows)]
        return "\n".join([header, *lines]) + "\n"

    def history_csv(self):
        n = self.history.shape[1] if len(self.history) else 0
        lines = ["check," + ",".join(f"L{i + 1}" for i in range(n))]
        for k, row in enumerate(self.history):
            lines.append(f"{k}," + ",".join(f"{v:.12g}" for v in row))
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class LyapunovRunParams:
    T_w: int = 1000
    N: int = 10
    T: int = 10000
    T_n: int = 1
    T_c: int = 100
    eps: float = 1e-4
    dt: float = 1.0
    tangent_warmup: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.T_c % self.T_n:
            raise ValueError("T_c must be a multiple of T_n")


def qr_positive(A):
    """Thin QR with the diagonal of R made non-negative."""
    Q, R = np.linalg.qr(A)
    s = np.sign(np.diag(R))
    s[s == 0] = 1.0
    return Q * s[None, :], R * s[:, None]


def kaplan_yorke(exponents, warn=True):
    """Kaplan-Yorke dimension ``j + S_j / |L_{j+1}|`` of a spectrum.

    ``j`` is the largest index whose partial sum ``S_j`` is non-negative.
    Returns 0 when the leading exponent is negative and the exponent count
    (with a warning unless ``warn`` is False) when every partial sum is
    positive, which is expected for a truncated spectrum.
    """
    lam = np.sort(np.asarray(exponents, dtype=np.float64))[::-1]
    if len(lam) == 0 or lam[0] < 0:
        return 0.0
    csum = np.cumsum(lam)
    nonneg = np.flatnonzero(csum >= 0)
    j = int(nonneg[-1]) + 1
    if j == len(lam):
        if warn:
            warnings.warn("Kaplan-Yorke dimension saturated: every partial sum is non-negative")
        return float(len(lam))
    return j + csum[j - 1] / abs(lam[j])


def _require_lyapunov_support(model):
    if not hasattr(model, "closed_loop_tangent"):
        raise UnsupportedModelError(f"{type(model).__name__} has no tangent dynamics")
    if getattr(model, "cell_kind", "gru") != "gru" or getattr(model, "layer_count", 1) != 1:
        raise UnsupportedModelError("surrogate spectra need a single hidden state (RC or 1-layer GRU)")


def model_jacobians(model, o_next, h):
    """Partial Jacobians ``(J1, J2, J0)`` of a single-hidden-state model.

    ``h`` is the model's hidden state object (array for RC, ``[h]`` for GRU).
    """
    _require_lyapunov_support(model)
    return model.jacobians(np.asarray(o_next, dtype=np.float64), h)


def _flat(hidden):
    return hidden[0] if isinstance(hidden, list) else hidden


def surrogate_spectrum(model, warm_series, params: LyapunovRunParams) -> LyapunovSpectrum:
    """Lyapunov spectrum of a trained surrogate's closed-loop dynamics.

    ``warm_series`` holds ``T_w + 1`` observations: the first ``T_w`` warm the
    hidden state, the last one is the first closed-loop input.
    """
    _require_lyapunov_support(model)
    warm_series = np.asarray(warm_series, dtype=np.float64)
    if len(warm_series) < params.T_w + 1:
        raise InvalidDimensionError(f"need {params.T_w + 1} warm-up samples")
    hidden = model.zero_state()
    for t in range(params.T_w):
        _, hidden = model.step(warm_series[t], hidden)
    _, hidden = model.step(warm_series[params.T_w], hidden)

    d_h = _flat(hidden).shape[0]
    if params.N > d_h:
        raise InvalidDimensionError(f"N={params.N} exceeds hidden size {d_h}")
    rng = np.random.default_rng(params.seed)
    delta, _ = qr_positive(rng.standard_normal((d_h, params.N)))

    for _ in range(params.tangent_warmup):
        hidden, delta = model.closed_loop_tangent(hidden, delta)
        delta, _ = qr_positive(delta)

    log_sum = np.zeros(params.N)
    l_prev = np.zeros(params.N)
    history = []
    converged = False
    t = 0
    for t in range(1, params.T + 1):
        hidden, delta = model.closed_loop_tangent(hidden, delta)
        if t % params.T_n == 0:
            if not (np.all(np.isfinite(delta)) and np.all(np.isfinite(_flat(hidden)))):
                partial = LyapunovSpectrum(l_prev, False, np.array(history).reshape(-1, params.N), kaplan_yorke(l_prev, warn=False))
                raise LyapunovDivergenceError(f"closed-loop trajectory diverged at step {t}", partial)
            delta, R = qr_positive(delta)
            log_sum += np.log(np.diag(R))
            if t % params.T_c == 0:
                l = np.sort(log_sum / (t * params.dt))[::-1]
                history.append(l)
                d = np.linalg.norm(l - l_prev)
                l_prev = l
                if d < params.eps:
                    converged = True
                    break
    if t % params.T_n:
        delta, R = qr_positive(delta)
        log_sum += np.log(np.diag(R))
    exps = np.sort(log_sum / (t * params.dt))[::-1]
    return LyapunovSpectrum(exps, converged, np.array(history).reshape(-1, params.N), kaplan_yorke(exps, warn=False))
