"""Parallel forecasting with local interactions on a periodic 1-D state.

The state is split into ``N_g`` contiguous groups of ``G`` sites. Member ``g``
sees its own sites plus ``I`` neighbours on each side (periodic wrap) and
predicts its own ``G`` sites. During closed-loop forecasting all members
predict from the same assembled state, then the new global state is assembled
before anyone reads it again.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidDecompositionError, MemberTrainingError
from .forecasting import closed_loop, warmup
from .gated_rnn import GatedRnnModel, train_bptt
from .reservoir import ReservoirParams, build_reservoir, fit_readout

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Group:
    owned: range
    inputs: np.ndarray  # global indices: left halo, owned, right halo


@dataclass(frozen=True)
class SpatialDecomposition:
    d_o: int
    G: int
    I: int
    groups: tuple

    @property
    def N_g(self):
        return len(self.groups)

    @property
    def input_width(self):
        return 2 * self.I + self.G


def decompose(d_o, G, I) -> SpatialDecomposition:
    if G < 1 or I < 0:
        raise InvalidDecompositionError("need G >= 1 and I >= 0")
    if d_o % G:
        raise InvalidDecompositionError(f"group size {G} does not divide d_o={d_o}")
    if 2 * I + G > d_o:
        raise InvalidDecompositionError(f"input width 2I+G={2 * I + G} exceeds d_o={d_o}")
    groups = []
    for g in range(d_o // G):
        lo = g * G
        idx = (lo - I + np.arange(2 * I + G)) % d_o
        groups.append(Group(range(lo, lo + G), idx))
    return SpatialDecomposition(d_o, G, I, tuple(groups))


def gather_local(decomp, group_id, global_state):
    return np.asarray(global_state)[..., decomp.groups[group_id].inputs]


def member_seed(base_seed, group_id):
    return int(np.random.SeedSequence([base_seed, group_id]).generate_state(1)[0])


@dataclass(frozen=True)
class GatedMemberSpec:
    """How to build and train one gated-RNN member."""

    cell_kind: str
    d_h: int
    bptt: object  # BpttConfig
    layer_count: int = 1


@dataclass
class ParallelModel:
    decomposition: SpatialDecomposition
    members: list
    jobs: int = 1

    @property
    def d_o(self):
        return self.decomposition.d_o

    def nbytes(self):
        return sum(m.nbytes() for m in self.members)

    def _map(self, fn, items):
        if self.jobs > 1:
            with ThreadPoolExecutor(self.jobs) as pool:
                return list(pool.map(fn, items))
        return [fn(i) for i in items]

    def forecast(self, series, horizon, bound=np.inf):
        """Batched counterpart of :func:`parallel_forecast` on ``(n_w + 1, B, d_o)`` series."""
        return parallel_forecast(self, series, horizon, bound)


def _train_member(decomp, g, train, spec, base_seed, sigma):
    x = gather_local(decomp, g, train[:-1])
    y = train[1:, decomp.groups[g].owned.start : decomp.groups[g].owned.stop]
    seed = member_seed(base_seed, g)
    if isinstance(spec, ReservoirParams):
        p = replace(spec, d_in=decomp.input_width, d_o=decomp.G, seed=seed)
        noise = p.noise_level * sigma[decomp.groups[g].inputs] if p.noise_level > 0 else None
        return fit_readout(build_reservoir(p), x, y, noise_std=noise, rng=np.random.default_rng([seed, 1]))
    model = GatedRnnModel.create(spec.cell_kind, decomp.input_width, spec.d_h, decomp.G, spec.layer_count, seed)
    bptt = replace(spec.bptt, seed=seed)
    trained, _ = train_bptt(model, None, bptt, inputs=x, targets=y)
    return trained


def _train_shared(decomp, train, spec, base_seed, sigma):
    xs = [gather_local(decomp, g, train[:-1]) for g in range(decomp.N_g)]
    ys = [train[1:, grp.owned.start : grp.owned.stop] for grp in decomp.groups]
    seed = member_seed(base_seed, 0)
    if isinstance(spec, ReservoirParams):
        p = replace(spec, d_in=decomp.input_width, d_o=decomp.G, seed=seed)
        noise = p.noise_level * sigma[decomp.groups[0].inputs] if p.noise_level > 0 else None
        return fit_readout(build_reservoir(p), xs, ys, noise_std=noise, rng=np.random.default_rng([seed, 1]))
    model = GatedRnnModel.create(spec.cell_kind, decomp.input_width, spec.d_h, decomp.G, spec.layer_count, seed)
    trained, _ = train_bptt(
        model, None, replace(spec.bptt, seed=seed), inputs=np.concatenate(xs), targets=np.concatenate(ys)
    )
    return trained


def train_parallel(decomp, dataset, member_spec, seed=0, jobs=1, share_weights=False) -> ParallelModel:
    """Train one member per group on its local sub-series.

    ``member_spec`` is a :class:`ReservoirParams` template (its ``d_in``, ``d_o``
    and ``seed`` are replaced per member) or a :class:`GatedMemberSpec`.
    With ``share_weights`` a single member is trained on every group's data and
    reused everywhere (for translation-invariant systems).
    """
    train = dataset.train
    if train.shape[1] != decomp.d_o:
        raise InvalidDecompositionError(f"dataset has {train.shape[1]} components, decomposition {decomp.d_o}")
    sigma = dataset.std
    if share_weights:
        member = _train_shared(decomp, train, member_spec, seed, sigma)
        return ParallelModel(decomp, [member] * decomp.N_g, jobs)

    def work(g):
        try:
            return _train_member(decomp, g, train, member_spec, seed, sigma)
        except Exception as err:  # tag with the group that failed
            raise MemberTrainingError(g, err) from err

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            members = list(pool.map(work, range(decomp.N_g)))
    else:
        members = [work(g) for g in range(decomp.N_g)]
    return ParallelModel(decomp, members, jobs)


def parallel_forecast(pmodel: ParallelModel, warm_series, horizon, bound=np.inf):
    """Step-synchronous closed-loop forecast of the assembled global state.

    ``warm_series`` is ``(n_w + 1, d_o)`` or batched ``(n_w + 1, B, d_o)``:
    members warm up on their gathered view of the first ``n_w`` rows and the
    last row is the initial condition. Returns ``(predictions, diverged_at)``
    shaped like :func:`chaoscast.forecasting.closed_loop` (batched) or
    :func:`chaoscast.forecasting.iterative_forecast` (single).
    """
    series = np.asarray(warm_series, dtype=np.float64)
    single = series.ndim == 2
    if single:
        series = series[:, None, :]
    decomp = pmodel.decomposition
    B = series.shape[1]
    hidden = pmodel._map(lambda g: warmup(pmodel.members[g], gather_local(decomp, g, series[:-1])), range(decomp.N_g))
    state = series[-1].copy()
    preds = np.full((horizon, B, decomp.d_o), np.nan)
    diverged = np.full(B, -1)

    def member_step(g):
        return pmodel.members[g].step(gather_local(decomp, g, state), hidden[g])

    for t in range(horizon):
        outs = pmodel._map(member_step, range(decomp.N_g))  # barrier
        new_state = np.empty_like(state)
        for g, (pred, h) in enumerate(outs):
            grp = decomp.groups[g].owned
            new_state[:, grp.start : grp.stop] = pred
            hidden[g] = h
        bad = ~np.all(np.abs(new_state) <= bound, axis=-1) & (diverged < 0)
        diverged[bad] = t
        dead = diverged >= 0
        if dead.any():
            new_state = np.where(dead[:, None], 0.0, new_state)
        preds[t] = np.where(dead[:, None], np.nan, new_state)
        state = new_state
    if not single:
        return preds, diverged
    d = int(diverged[0])
    return (preds[:d, 0], d) if d >= 0 else (preds[:, 0], None)
