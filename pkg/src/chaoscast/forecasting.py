"""Closed-loop forecasting for any trained model.

A model only needs ``zero_state(batch)`` and ``step(o, state) -> (prediction, state)``.
Models exposing ``members`` (see :mod:`chaoscast.parallel`) are dispatched to
their own ``forecast`` method.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import TimeSeriesDataset

_CHUNK = 64


@dataclass
class ForecastRun:
    initial_index: int
    warmup_steps: int
    horizon: int
    predictions: np.ndarray
    targets: np.ndarray
    diverged_at: int | None = None


def warmup(model, series):
    """Teacher-force ``series`` from a zero state and return the final state.

    ``series`` is ``(n_w, d)`` or batched ``(n_w, B, d)``.
    """
    series = np.asarray(series, dtype=np.float64)
    batch = series.shape[1] if series.ndim == 3 else None
    hidden = model.zero_state(batch)
    for o in series:
        _, hidden = model.step(o, hidden)
    return hidden


def closed_loop(model, hidden, o_start, horizon, bound=np.inf):
    """Batched closed-loop roll-out.

    Returns ``(predictions, diverged_at)`` with predictions of shape
    ``(horizon, B, d_o)`` (NaN after divergence) and ``diverged_at`` an int
    array holding the first diverging step per run, -1 when none.
    """
    o = np.array(o_start, dtype=np.float64)
    B = o.shape[0]
    preds = np.full((horizon, B, model.d_o), np.nan)
    diverged = np.full(B, -1)
    for t in range(horizon):
        pred, hidden = model.step(o, hidden)
        bad = ~np.all(np.abs(pred) <= bound, axis=-1) & (diverged < 0)
        diverged[bad] = t
        dead = diverged >= 0
        if dead.any():
            pred = np.where(dead[:, None], 0.0, pred)
        preds[t] = np.where(dead[:, None], np.nan, pred)
        o = pred
    return preds, diverged


def iterative_forecast(model, hidden, o_start, horizon, bound=np.inf):
    """Feed each prediction back as the next input.

    Returns ``(predictions, diverged_at)``; for a diverging run the predictions
    stop before the step that crossed ``bound``.
    """
    o_start = np.asarray(o_start, dtype=np.float64)
    single = o_start.ndim == 1
    if single:
        hidden = _batch_one(hidden)
        o_start = o_start[None, :]
    preds, div = closed_loop(model, hidden, o_start, horizon, bound)
    if not single:
        return preds, div
    d = int(div[0])
    if d >= 0:
        return preds[:d, 0], d
    return preds[:, 0], None


def _batch_one(hidden):
    if isinstance(hidden, np.ndarray):
        return hidden[None, :]
    if isinstance(hidden, list):
        return [_batch_one(h) for h in hidden]
    if isinstance(hidden, tuple):
        return tuple(_batch_one(h) for h in hidden)
    return hidden


def forecast_from_series(model, series, horizon, bound=np.inf):
    """Warm up on ``series[:-1]`` and forecast from ``series[-1]`` (batched)."""
    if hasattr(model, "members"):
        return model.forecast(series, horizon, bound)
    hidden = warmup(model, series[:-1])
    return closed_loop(model, hidden, series[-1], horizon, bound)


def divergence_bound(dataset):
    return 10.0 * float(np.max(np.abs(dataset.train)))


def sample_initial_indices(n_test, n_ic, n_w, horizon, seed):
    n_valid = n_test - n_w - horizon
    if n_ic > n_valid:
        raise ValueError(f"requested {n_ic} initial conditions but only {max(n_valid, 0)} positions fit")
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(n_valid, size=n_ic, replace=False))


def evaluate_many(model, dataset, n_ic, n_w, horizon, seed=0, bound=None):
    """Forecast from ``n_ic`` random test positions.

    Run ``k`` warms up on ``test[s : s + n_w]``, starts from ``test[s + n_w]``
    and is scored against ``test[s + n_w + 1 : s + n_w + 1 + horizon]``.
    """
    test = dataset.test
    starts = sample_initial_indices(len(test), n_ic, n_w, horizon, seed)
    bound = divergence_bound(dataset) if bound is None else bound
    runs = []
    for c in range(0, len(starts), _CHUNK):
        chunk = starts[c : c + _CHUNK]
        idx = chunk[None, :] + np.arange(n_w + 1)[:, None]
        series = test[idx]  # (n_w + 1, B, d)
        preds, div = forecast_from_series(model, series, horizon, bound)
        for b, s in enumerate(chunk):
            tgt = test[s + n_w + 1 : s + n_w + 1 + horizon]
            d = int(div[b])
            if d >= 0:
                runs.append(ForecastRun(int(s), n_w, horizon, preds[:d, b], tgt[:d], d))
            else:
                runs.append(ForecastRun(int(s), n_w, horizon, preds[:, b], tgt, None))
    return runs


# ----------------------------------------------------------------------------
# persistence


def save_runs(runs, directory, dt, d_o):
    """Write predictions/targets as stacked ``.chf`` files plus a text manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    pred = np.concatenate([r.predictions for r in runs]) if runs else np.zeros((0, d_o))
    tgt = np.concatenate([r.targets for r in runs]) if runs else np.zeros((0, d_o))
    ones, zeros = np.ones(d_o), np.zeros(d_o)
    TimeSeriesDataset(pred.reshape(-1, d_o), dt, 0, zeros, ones).save(directory / "predictions.chf")
    TimeSeriesDataset(tgt.reshape(-1, d_o), dt, 0, zeros, ones).save(directory / "targets.chf")
    lines = ["run,initial_index,warmup_steps,horizon,length,diverged_at"]
    for k, r in enumerate(runs):
        div = "" if r.diverged_at is None else str(r.diverged_at)
        lines.append(f"{k},{r.initial_index},{r.warmup_steps},{r.horizon},{len(r.predictions)},{div}")
    (directory / "runs.csv").write_text("\n".join(lines) + "\n")


def load_runs(directory):
    directory = Path(directory)
    pred = TimeSeriesDataset.load(directory / "predictions.chf").values
    tgt = TimeSeriesDataset.load(directory / "targets.chf").values
    runs = []
    offset = 0
    for line in (directory / "runs.csv").read_text().splitlines()[1:]:
        _, s, n_w, h, length, div = line.split(",")
        length = int(length)
        runs.append(
            ForecastRun(
                int(s), int(n_w), int(h),
                pred[offset : offset + length], tgt[offset : offset + length],
                int(div) if div else None,
            )
        )
        offset += length
    return runs
