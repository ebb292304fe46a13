"""Command-line entry point: ``chaoscast <subcommand> --config PATH [--set key=value ...]``.

Exit codes: 0 success, 1 configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from ..errors import BundleError, ConfigError
from ..forecasting import divergence_bound, load_runs, save_runs, evaluate_many
from ..lyapunov import LyapunovRunParams, surrogate_spectrum
from ..metrics import summarize
from ..dynamics import true_lyapunov_spectrum
from .bundle import load_bundle, save_bundle
from .config import ExperimentConfig, load_config, parse_overrides
from .experiment import (
    build_and_train,
    grid_search,
    load_data,
    make_observable,
    resolve_lambda1,
    run_experiment,
    write_metrics,
)

log = logging.getLogger("chaoscast")


def _default_jobs():
    raw = os.environ.get("CHAOSCAST_JOBS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"CHAOSCAST_JOBS must be an integer, got {raw!r}") from None


def _config(args) -> ExperimentConfig:
    overrides = parse_overrides(args.set)
    if args.config:
        return load_config(args.config, overrides)
    return ExperimentConfig().with_overrides(overrides)


def _outdir(args, cfg):
    out = Path(args.output or cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(args):
    cfg = _config(args)
    data = load_data(cfg)
    path = _outdir(args, cfg) / "data.chf"
    data.save(path)
    print(f"wrote {path} ({data.n_samples} x {data.d_o})")


def cmd_reduce(args):
    cfg = _config(args)
    if cfg.observable.kind != "svd":
        raise ConfigError("reduce needs observable.kind = svd")
    obs = make_observable(cfg, load_data(cfg))
    out = _outdir(args, cfg)
    obs.dataset.save(out / "observable.chf")
    save_bundle(obs.basis, out / "basis.chmb")
    print(f"wrote {out / 'observable.chf'} and {out / 'basis.chmb'}")


def cmd_train(args):
    cfg = _config(args)
    obs = make_observable(cfg, load_data(cfg))
    model, train_log = build_and_train(cfg, obs, args.jobs)
    out = _outdir(args, cfg)
    extras = {"norm.mean": obs.raw_mean, "norm.std": obs.raw_std}
    save_bundle(model, out / "model.chmb", extras)
    if train_log:
        (out / "training.csv").write_text(train_log)
    print(f"wrote {out / 'model.chmb'}")


def cmd_forecast(args):
    cfg = _config(args)
    obs = make_observable(cfg, load_data(cfg))
    model = load_bundle(args.model)
    if args.jobs > 1 and hasattr(model, "members"):
        model.jobs = args.jobs
    e = cfg.eval
    runs = evaluate_many(model, obs.dataset, e.n_ic, e.n_w, e.horizon, seed=cfg.seed, bound=divergence_bound(obs.dataset))
    out = _outdir(args, cfg) / "forecasts"
    save_runs(runs, out, obs.dataset.dt, obs.dataset.d_o)
    print(f"wrote {len(runs)} runs to {out}")


def cmd_evaluate(args):
    cfg = _config(args)
    forecasts = Path(args.forecasts)
    runs = load_runs(forecasts)
    lam = resolve_lambda1(cfg)
    sigma = np.ones(runs[0].targets.shape[1]) if runs else np.ones(1)
    dt = cfg.system.dt
    if cfg.system.kind == "file":
        dt = load_data(cfg).dt
    metrics = summarize(runs, sigma, dt, lam, cfg.eval.epsilon)
    out = _outdir(args, cfg)
    write_metrics(out, metrics, dt)
    print(metrics.summary_text(), end="")


def cmd_lyapunov(args):
    cfg = _config(args)
    out = _outdir(args, cfg)
    if args.model:
        obs = make_observable(cfg, load_data(cfg))
        model = load_bundle(args.model)
        p = LyapunovRunParams(T_w=cfg.eval.n_w, N=args.n, T=args.steps, dt=obs.dataset.dt, seed=cfg.seed)
        spec = surrogate_spectrum(model, obs.dataset.test[: p.T_w + 1], p)
    else:
        spec = true_lyapunov_spectrum(cfg.system_config(), args.n, T=cfg.eval.lyapunov_T, seed=cfg.seed)
    (out / "lyapunov.csv").write_text(spec.to_csv())
    (out / "lyapunov_history.csv").write_text(spec.history_csv())
    print(f"lambda1={spec.exponents[0]:.6g} ky={spec.ky_dimension:.4g} converged={spec.converged}")


def cmd_run(args):
    report = run_experiment(_config(args), jobs=args.jobs, output_dir=args.output)
    print(report.to_text(), end="")


def cmd_grid(args):
    axes = {}
    for item in args.axis or ():
        if "=" not in item:
            raise ConfigError(f"axis {item!r} is not key=v1,v2,...")
        k, v = item.split("=", 1)
        axes[k.strip()] = [s.strip() for s in v.split(",") if s.strip()]
    if not axes:
        raise ConfigError("grid needs at least one --axis")
    _, summary = grid_search(_config(args), axes, jobs=args.jobs, output_dir=args.output)
    print(summary, end="")


def build_parser():
    parser = argparse.ArgumentParser(prog="chaoscast", description="Data-driven forecasting of chaotic systems.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
        p.add_argument("--jobs", type=int, default=None, help="worker threads (default $CHAOSCAST_JOBS or 1)")
        p.add_argument("--output", help="output directory (default output.dir)")
        p.set_defaults(func=fn)
        return p

    add("simulate", cmd_simulate, "simulate the configured system and save data.chf")
    add("reduce", cmd_reduce, "fit the SVD basis and save the reduced observable")
    add("train", cmd_train, "train the configured model and save a bundle")
    add("forecast", cmd_forecast, "forecast from random test positions with a saved model").add_argument(
        "--model", required=True
    )
    add("evaluate", cmd_evaluate, "score saved forecasts").add_argument("--forecasts", required=True)
    p = add("lyapunov", cmd_lyapunov, "Lyapunov spectrum of the system, or of a saved surrogate with --model")
    p.add_argument("--model")
    p.add_argument("--n", type=int, default=10, help="number of exponents")
    p.add_argument("--steps", type=int, default=10000, help="surrogate steps")
    add("run", cmd_run, "full pipeline: data, train, evaluate, persist")
    add("grid", cmd_grid, "grid search").add_argument(
        "--axis", action="append", metavar="KEY=V1,V2", help="one grid axis"
    )
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.jobs is None:
            args.jobs = _default_jobs()
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 1
    except (BundleError, OSError, RuntimeError, ValueError, ArithmeticError, TypeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
