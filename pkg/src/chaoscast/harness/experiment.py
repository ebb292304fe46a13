"""End-to-end experiments: data, observable, training, evaluation, persistence."""

from __future__ import annotations

import itertools
import logging
import shutil
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..data import TimeSeriesDataset
from ..dynamics import KSConfig, simulate_ks, simulate_lorenz96, true_lyapunov_spectrum
from ..errors import ConfigError, ExperimentError
from ..forecasting import evaluate_many, save_runs
from ..gated_rnn import GatedRnnModel, train_bptt
from ..metrics import MetricsReport, summarize
from ..parallel import GatedMemberSpec, decompose, train_parallel
from ..reduction import reduce_dataset
from ..reservoir import build_reservoir, train_rc
from .bundle import save_bundle
from .config import ExperimentConfig

log = logging.getLogger(__name__)

METRIC_FILES = ("nrmse.csv", "psd.csv", "vpt.csv", "summary.txt")


@dataclass
class Observable:
    """Data as the model sees it plus what is needed to map back."""

    dataset: TimeSeriesDataset  # normalized observable
    raw_mean: np.ndarray
    raw_std: np.ndarray
    basis: object = None


@dataclass
class RunReport:
    config: ExperimentConfig
    metrics: MetricsReport
    wall_times: dict
    memory_estimate: int
    bundle_path: Path
    output_dir: Path
    lambda1: float
    files: list = field(default_factory=list)

    def to_text(self):
        lines = [f"output_dir = {self.output_dir}", f"bundle = {self.bundle_path}", f"lambda1 = {self.lambda1:.12g}"]
        lines += [f"wall_time.{k} = {v:.3f}" for k, v in self.wall_times.items()]
        lines.append(f"memory_estimate_bytes = {self.memory_estimate}  # analytic, from array sizes")
        lines.append(self.metrics.summary_text().rstrip())
        return "\n".join(lines) + "\n"


class _Stage:
    """Times a stage and tags any failure with its name."""

    def __init__(self, name, times):
        self.name, self.times = name, times

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, typ, err, tb):
        self.times[self.name] = time.perf_counter() - self.t0
        if err is not None and not isinstance(err, ExperimentError):
            raise ExperimentError(self.name, err) from err
        return False


# ----------------------------------------------------------------------------
# stages


def load_data(cfg: ExperimentConfig) -> TimeSeriesDataset:
    s = cfg.system
    if s.kind == "file":
        return TimeSeriesDataset.load(s.path)
    sys_cfg = cfg.system_config()
    return simulate_ks(sys_cfg) if isinstance(sys_cfg, KSConfig) else simulate_lorenz96(sys_cfg)


def make_observable(cfg: ExperimentConfig, data: TimeSeriesDataset) -> Observable:
    basis = None
    if cfg.observable.kind == "svd":
        data, basis = reduce_dataset(data, cfg.observable.r)
    return Observable(data.normalized(), data.mean, data.std, basis)


def build_and_train(cfg: ExperimentConfig, obs: Observable, jobs=1):
    """Return ``(model, training_log_text or None)``."""
    ds = obs.dataset
    m, p = cfg.model, cfg.parallel
    if p.G:
        dec = decompose(ds.d_o, p.G, p.I)
        if m.family == "rc":
            spec = cfg.reservoir_params(dec.G)
        else:
            spec = GatedMemberSpec(m.family, m.d_h, cfg.bptt_config(), m.layers)
        return train_parallel(dec, ds, spec, seed=cfg.seed, jobs=jobs, share_weights=p.share_weights), None
    if m.family == "rc":
        return train_rc(build_reservoir(cfg.reservoir_params(ds.d_o)), ds), None
    model = GatedRnnModel.create(m.family, ds.d_o, m.d_h, ds.d_o, m.layers, cfg.seed)
    model, report = train_bptt(model, ds, cfg.bptt_config())
    return model, report.to_text()


def resolve_lambda1(cfg: ExperimentConfig):
    lam = cfg.lambda1_value
    if lam is not None:
        return lam
    spec = true_lyapunov_spectrum(cfg.system_config(), 1, T=cfg.eval.lyapunov_T, seed=cfg.seed)
    return float(spec.exponents[0])


def memory_estimate(cfg: ExperimentConfig, obs: Observable, model):
    """Bytes of the main live arrays, computed from their dimensions."""
    ds = obs.dataset
    total = ds.values.nbytes * 2  # raw and normalized copies
    total += model.nbytes()
    d_h = cfg.model.d_h
    if cfg.model.family == "rc":
        total += 8 * (d_h * d_h + ds.d_o * d_h + 1000 * d_h)  # normal equations + one state batch
    else:
        t = cfg.train
        per_step = 8 * t.batch_size * d_h * (6 if cfg.model.family == "gru" else 8) * cfg.model.layers
        total += per_step * (t.kappa1 + t.kappa2) + 3 * model.nbytes()  # caches + Adam moments + grads
    if obs.basis is not None:
        total += obs.basis.modes.nbytes
    e = cfg.eval
    total += 8 * min(e.n_ic, 64) * (e.horizon + e.n_w + 1) * ds.d_o
    return int(total)


def vpt_csv(metrics: MetricsReport):
    lines = ["run,vpt"] + [f"{k},{v:.12g}" for k, v in enumerate(metrics.vpts)]
    return "\n".join(lines) + "\n"


def write_metrics(directory, metrics: MetricsReport, dt):
    directory = Path(directory)
    (directory / "nrmse.csv").write_text(metrics.nrmse_csv(dt))
    (directory / "psd.csv").write_text(metrics.psd_csv())
    (directory / "vpt.csv").write_text(vpt_csv(metrics))
    (directory / "summary.txt").write_text(metrics.summary_text())


def run_experiment(cfg: ExperimentConfig, jobs=1, output_dir=None) -> RunReport:
    """Simulate or load, reduce, train, forecast, score and persist one configuration.

    Outputs go to a scratch directory renamed into place on success; on any
    failure the scratch directory is removed and :class:`ExperimentError`
    names the failing stage.
    """
    out = Path(output_dir or cfg.output.dir)
    tmp = out.with_name(out.name + ".partial")
    times = {}
    try:
        if tmp.exists():
            shutil.rmtree(tmp)
        tmp.mkdir(parents=True)
        (tmp / "config.txt").write_text(cfg.to_text())
        with _Stage("data", times):
            data = load_data(cfg)
        with _Stage("reduce", times):
            obs = make_observable(cfg, data)
        with _Stage("lambda1", times):
            lam = resolve_lambda1(cfg)
        with _Stage("train", times):
            model, train_log = build_and_train(cfg, obs, jobs)
        with _Stage("evaluate", times):
            e = cfg.eval
            runs = evaluate_many(model, obs.dataset, e.n_ic, e.n_w, e.horizon, seed=cfg.seed)
            metrics = summarize(runs, obs.dataset.std, obs.dataset.dt, lam, e.epsilon)
        with _Stage("persist", times):
            extras = {"norm.mean": obs.raw_mean, "norm.std": obs.raw_std}
            if obs.basis is not None:
                extras.update(
                    {"svd.mean": obs.basis.mean, "svd.modes": obs.basis.modes, "svd.singular_values": obs.basis.singular_values}
                )
            save_bundle(model, tmp / "model.chmb", extras)
            save_runs(runs, tmp / "forecasts", obs.dataset.dt, obs.dataset.d_o)
            write_metrics(tmp, metrics, obs.dataset.dt)
            (tmp / "lambda1.txt").write_text(f"{lam:.17g}\n")
            if train_log is not None:
                (tmp / "training.csv").write_text(train_log)
            mem = memory_estimate(cfg, obs, model)
            report = RunReport(cfg, metrics, times, mem, out / "model.chmb", out, lam)
            (tmp / "report.txt").write_text(report.to_text())
            if out.exists():
                shutil.rmtree(out)
            tmp.rename(out)
        report.files = sorted(str(p.relative_to(out)) for p in out.rglob("*") if p.is_file())
        return report
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise


# ----------------------------------------------------------------------------
# grid search


def expand_grid(axes):
    """Cartesian product of ``{key: [values]}`` as a list of override dicts."""
    keys = list(axes)
    for k in keys:
        if not axes[k]:
            raise ConfigError(f"grid axis {k!r} has no values")
    return [dict(zip(keys, combo)) for combo in itertools.product(*(axes[k] for k in keys))]


def grid_search(base: ExperimentConfig, axes, jobs=1, output_dir=None):
    """Run every point of the grid; returns ``(reports, summary_csv)``.

    Point ``i`` writes to ``<output>/point_<i>``. Points run on ``jobs``
    threads; each point is independent, so results do not depend on order.
    The summary is sorted by mean VPT (descending, ties by point index).
    """
    root = Path(output_dir or base.output.dir)
    points = expand_grid(axes)
    configs = [base.with_overrides({k: str(v) for k, v in p.items()}) for p in points]
    root.mkdir(parents=True, exist_ok=True)

    def run(i):
        return run_experiment(configs[i], jobs=1, output_dir=root / f"point_{i:04d}")

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            reports = list(pool.map(run, range(len(configs))))
    else:
        reports = [run(i) for i in range(len(configs))]
    order = sorted(range(len(reports)), key=lambda i: (-reports[i].metrics.vpt_mean, i))
    keys = list(axes)
    lines = ["point," + ",".join(keys) + ",vpt_mean,vpt_max"]
    for i in order:
        vals = ",".join(str(points[i][k]) for k in keys)
        m = reports[i].metrics
        lines.append(f"{i},{vals},{m.vpt_mean:.12g},{m.vpt_max:.12g}")
    summary = "\n".join(lines) + "\n"
    (root / "grid_summary.csv").write_text(summary)
    return reports, summary
