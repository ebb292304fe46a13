"""Forecast quality metrics: NRMSE, valid prediction time and power spectra."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidNormalizationError

PSD_FLOOR_DB = -200.0


def nrmse(pred, target, sigma):
    """Root of the component-averaged squared error normalized by ``sigma**2``.

    Broadcasts over leading axes, e.g. ``(steps, d_o)`` gives one value per step.
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma <= 0):
        raise InvalidNormalizationError("sigma must be positive in every component")
    err = (np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64)) / sigma
    return np.sqrt(np.mean(err * err, axis=-1))


def vpt(nrmse_curve, dt, lambda1, epsilon=0.5):
    """Valid prediction time in Lyapunov times.

    ``t_f`` is ``dt`` times the number of leading steps whose NRMSE stays below
    ``epsilon``; the result is ``t_f * lambda1``.
    """
    if lambda1 <= 0:
        raise ValueError("lambda1 must be positive")
    curve = np.asarray(nrmse_curve, dtype=np.float64)
    ok = curve < epsilon  # NaN counts as a failure
    n_valid = len(curve) if ok.all() else int(np.argmin(ok))
    return n_valid * dt * lambda1


def power_spectrum(series, dt):
    """Mean power spectral density in dB over components.

    Uses the one-sided spectrum ``U = rfft(x) / N`` and ``20 log10(2 |U|)``,
    so a sinusoid of amplitude ``A`` peaks at ``20 log10(A)``. Returns
    ``(frequencies, psd_db)``.
    """
    x = np.asarray(series, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    if n < 2:
        raise ValueError("need at least two samples for a spectrum")
    U = np.fft.rfft(x, axis=0) / n
    with np.errstate(divide="ignore"):
        db = 20.0 * np.log10(2.0 * np.abs(U))
    db = np.maximum(db, PSD_FLOOR_DB)
    return np.fft.rfftfreq(n, d=dt), db.mean(axis=1)


@dataclass
class MetricsReport:
    nrmse_curve: np.ndarray
    vpts: np.ndarray
    vpt_mean: float
    vpt_min: float
    vpt_max: float
    frequencies: np.ndarray
    psd: np.ndarray
    divergent_count: int

    def nrmse_csv(self, dt):
        lines = ["step,time,nrmse"]
        lines += [f"{i + 1},{(i + 1) * dt:.10g},{v:.12g}" for i, v in enumerate(self.nrmse_curve)]
        return "\n".join(lines) + "\n"

    def psd_csv(self):
        lines = ["frequency,psd_db"]
        lines += [f"{f:.12g},{p:.12g}" for f, p in zip(self.frequencies, self.psd)]
        return "\n".join(lines) + "\n"

    def summary_text(self):
        return (
            f"vpt_mean={self.vpt_mean:.12g}\n"
            f"vpt_min={self.vpt_min:.12g}\n"
            f"vpt_max={self.vpt_max:.12g}\n"
            f"runs={len(self.vpts)}\n"
            f"divergent={self.divergent_count}\n"
        )


def summarize(runs, sigma, dt, lambda1, epsilon=0.5):
    """Aggregate forecast runs.

    The NRMSE curve is averaged step by step over the runs still alive at that
    step; VPT is computed per run and then reduced to mean/min/max. The power
    spectrum is averaged over runs that did not diverge.
    """
    if not runs:
        empty = np.zeros(0)
        return MetricsReport(empty, empty, 0.0, 0.0, 0.0, empty, empty, 0)
    curves = [nrmse(r.predictions, r.targets, sigma) for r in runs]
    horizon = max(len(c) for c in curves)
    total = np.zeros(horizon)
    count = np.zeros(horizon)
    for c in curves:
        total[: len(c)] += c
        count[: len(c)] += 1
    curve = np.divide(total, count, out=np.full(horizon, np.nan), where=count > 0)
    vpts = np.array([vpt(c, dt, lambda1, epsilon) for c in curves])
    alive = [r for r in runs if r.diverged_at is None and len(r.predictions) >= 2]
    if alive:
        spectra = [power_spectrum(r.predictions, dt) for r in alive]
        n = min(len(s[1]) for s in spectra)
        freqs = spectra[0][0][:n]
        psd = np.mean([s[1][:n] for s in spectra], axis=0)
    else:
        freqs = psd = np.zeros(0)
    divergent = sum(r.diverged_at is not None for r in runs)
    return MetricsReport(
        curve, vpts, float(vpts.mean()), float(vpts.min()), float(vpts.max()), freqs, psd, divergent
    )
