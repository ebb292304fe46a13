"""Flat ``section.key = value`` experiment configuration.

Example::

    # comments start with '#'
    seed = 3
    system.kind = lorenz96
    system.F = 8
    model.family = rc
    model.d_h = 1000
    eval.lambda1 = 1.68

Unknown keys and malformed values raise :class:`ConfigError`.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import get_type_hints

from ..dynamics import KSConfig, Lorenz96Config
from ..errors import ConfigError
from ..gated_rnn import BpttConfig
from ..reservoir import ReservoirParams


@dataclass(frozen=True)
class SystemSpec:
    kind: str = "lorenz96"  # lorenz96 | ks | file
    J: int = 40
    F: float = 8.0
    L: float = 200.0
    nu: float = 1.0
    D: int = 512
    dt: float = 0.01
    t_transient: float = 100.0
    t_total: float = 300.0
    train_fraction: float = 0.5
    path: str = ""


@dataclass(frozen=True)
class ObservableSpec:
    kind: str = "full"  # full | svd
    r: int = 0


@dataclass(frozen=True)
class ModelSpec:
    family: str = "rc"  # rc | gru | lstm
    d_h: int = 500
    layers: int = 1
    degree: float = 10.0
    rho: float = 0.6
    omega: float = 0.5
    eta: float = 1e-6
    noise_level: float = 0.0
    n_warmup: int = 2000


@dataclass(frozen=True)
class TrainSpec:
    kappa1: int = 1
    kappa2: int = 8
    batch_size: int = 32
    zoneout_keep: float = 1.0
    noise_level: float = 0.0
    lr0: float = 1e-3
    n_rounds: int = 3
    patience: int = 10
    max_epochs: int = 50
    validation_fraction: float = 0.1


@dataclass(frozen=True)
class ParallelSpec:
    G: int = 0  # 0 disables the parallel scheme
    I: int = 0
    share_weights: bool = False


@dataclass(frozen=True)
class EvalSpec:
    n_ic: int = 20
    n_w: int = 2000
    horizon: int = 500
    epsilon: float = 0.5
    lambda1: str = "compute"  # a number, or "compute"
    lyapunov_T: float = 500.0


@dataclass(frozen=True)
class OutputSpec:
    dir: str = "run"


_SECTIONS = {
    "system": SystemSpec,
    "observable": ObservableSpec,
    "model": ModelSpec,
    "train": TrainSpec,
    "parallel": ParallelSpec,
    "eval": EvalSpec,
    "output": OutputSpec,
}


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    system: SystemSpec = field(default_factory=SystemSpec)
    observable: ObservableSpec = field(default_factory=ObservableSpec)
    model: ModelSpec = field(default_factory=ModelSpec)
    train: TrainSpec = field(default_factory=TrainSpec)
    parallel: ParallelSpec = field(default_factory=ParallelSpec)
    eval: EvalSpec = field(default_factory=EvalSpec)
    output: OutputSpec = field(default_factory=OutputSpec)

    def __post_init__(self):
        validate(self)

    # builders for the library-level configs

    def system_config(self):
        s = self.system
        if s.kind == "lorenz96":
            return Lorenz96Config(s.J, s.F, s.dt, s.t_transient, s.t_total, self.seed, s.train_fraction)
        if s.kind == "ks":
            return KSConfig(s.L, s.nu, s.D, s.dt, s.t_transient, s.t_total, self.seed, s.train_fraction)
        return None

    def reservoir_params(self, d_o):
        m = self.model
        return ReservoirParams(
            d_h=m.d_h, d_o=d_o, degree=m.degree, rho=m.rho, omega=m.omega, eta=m.eta,
            noise_level=m.noise_level, seed=self.seed, n_warmup=m.n_warmup,
        )

    def bptt_config(self):
        t = self.train
        return BpttConfig(
            kappa1=t.kappa1, kappa2=t.kappa2, batch_size=t.batch_size, zoneout_keep=t.zoneout_keep,
            noise_level=t.noise_level, lr0=t.lr0, n_rounds=t.n_rounds, patience=t.patience,
            max_epochs=t.max_epochs, validation_fraction=t.validation_fraction, seed=self.seed,
        )

    @property
    def lambda1_value(self):
        """The supplied leading exponent, or ``None`` when it must be computed."""
        if self.eval.lambda1 == "compute":
            return None
        return float(self.eval.lambda1)

    def with_overrides(self, pairs):
        return from_mapping(pairs, base=self)

    def to_text(self):
        """Canonical text form; parsing it gives back an equal config."""
        lines = [f"seed = {self.seed}"]
        for name in _SECTIONS:
            section = getattr(self, name)
            for f in fields(section):
                lines.append(f"{name}.{f.name} = {_format(getattr(section, f.name))}")
        return "\n".join(lines) + "\n"


def _format(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _coerce(key, raw, typ):
    raw = raw.strip()
    try:
        if typ is bool:
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if typ is int:
            f = float(raw)
            if f != int(f):
                raise ValueError(raw)
            return int(f)
        if typ is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {typ.__name__}") from None


def parse_text(text):
    """Parse config text into an ordered ``{key: raw_value}`` dict."""
    pairs = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key.count(".") > 1 or not key:
            raise ConfigError(f"line {n}: keys allow at most one dotted section ({key!r})")
        pairs[key] = value
    return pairs


def from_mapping(pairs, base=None) -> ExperimentConfig:
    base = ExperimentConfig() if base is None else base
    updates = {}
    sections = {name: {} for name in _SECTIONS}
    for key, raw in pairs.items():
        if "." not in key:
            if key != "seed":
                raise ConfigError(f"unknown key {key!r}")
            updates["seed"] = _coerce(key, str(raw), int)
            continue
        sec, name = key.split(".", 1)
        if sec not in _SECTIONS:
            raise ConfigError(f"unknown section {sec!r}")
        hints = get_type_hints(_SECTIONS[sec])
        if name not in hints:
            raise ConfigError(f"unknown key {key!r}")
        sections[sec][name] = _coerce(key, str(raw), hints[name])
    for sec, vals in sections.items():
        if vals:
            updates[sec] = replace(getattr(base, sec), **vals)
    try:
        return replace(base, **updates)
    except ConfigError:
        raise
    except (ValueError, TypeError) as err:
        raise ConfigError(str(err)) from err


def load_config(path, overrides=None) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    pairs = parse_text(text)
    pairs.update(overrides or {})
    return from_mapping(pairs)


def parse_overrides(items):
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def validate(cfg: ExperimentConfig):
    s, o, m, p, e = cfg.system, cfg.observable, cfg.model, cfg.parallel, cfg.eval
    if s.kind not in ("lorenz96", "ks", "file"):
        raise ConfigError(f"system.kind must be lorenz96, ks or file, got {s.kind!r}")
    if s.kind == "file" and not s.path:
        raise ConfigError("system.kind = file needs system.path")
    if o.kind not in ("full", "svd"):
        raise ConfigError(f"observable.kind must be full or svd, got {o.kind!r}")
    if o.kind == "svd" and o.r < 1:
        raise ConfigError("observable.kind = svd needs observable.r >= 1")
    if m.family not in ("rc", "gru", "lstm"):
        raise ConfigError(f"model.family must be rc, gru or lstm, got {m.family!r}")
    if m.d_h < 1 or m.layers < 1:
        raise ConfigError("model.d_h and model.layers must be positive")
    if p.G < 0 or p.I < 0:
        raise ConfigError("parallel.G and parallel.I must be non-negative")
    if p.G and o.kind != "full":
        raise ConfigError("the parallel scheme needs full-state observables")
    if e.n_ic < 1 or e.n_w < 0 or e.horizon < 0 or e.epsilon <= 0:
        raise ConfigError("eval: need n_ic >= 1, n_w >= 0, horizon >= 0, epsilon > 0")
    if e.lambda1 != "compute":
        try:
            lam = float(e.lambda1)
        except ValueError:
            raise ConfigError(f"eval.lambda1 must be a number or 'compute', got {e.lambda1!r}") from None
        if lam <= 0:
            raise ConfigError("eval.lambda1 must be positive")
    elif s.kind == "file":
        raise ConfigError("eval.lambda1 must be supplied for file datasets")


def section_fields():
    """All valid dotted keys, for help output."""
    keys = ["seed"]
    for name, cls in _SECTIONS.items():
        keys += [f"{name}.{f.name}" for f in dataclasses.fields(cls)]
    return keys
