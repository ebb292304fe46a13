"""GRU and LSTM forecasters trained by stateful truncated BPTT.

Arrays are batch-first: inputs ``(B, d_in)``, hidden states ``(B, d_h)``;
single unbatched vectors work as well for the forward functions. Every gate
acts on the concatenation ``[h_{t-1}, x_t]`` (hidden first).

Gradients are derived by hand; the test-suite checks them against central
finite differences.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidDimensionError, TrainingDivergenceError

log = logging.getLogger(__name__)

CLIP_NORM = 5.0


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def xavier_init(shape, seed=None, rng=None):
    """Uniform Glorot initialization on ``[-b, b]``, ``b = sqrt(6 / (fan_in + fan_out))``."""
    rng = np.random.default_rng(seed) if rng is None else rng
    fan_out, fan_in = shape
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


# ----------------------------------------------------------------------------
# cells


@dataclass
class GruLayer:
    W_z: np.ndarray
    W_r: np.ndarray
    W_h: np.ndarray
    b_z: np.ndarray
    b_r: np.ndarray
    b_h: np.ndarray

    names = ("W_z", "W_r", "W_h", "b_z", "b_r", "b_h")

    @property
    def d_h(self):
        return self.W_z.shape[0]

    @property
    def d_in(self):
        return self.W_z.shape[1] - self.W_z.shape[0]

    @classmethod
    def init(cls, d_in, d_h, rng):
        shape = (d_h, d_h + d_in)
        return cls(
            xavier_init(shape, rng=rng),
            xavier_init(shape, rng=rng),
            xavier_init(shape, rng=rng),
            np.zeros(d_h),
            np.zeros(d_h),
            np.zeros(d_h),
        )

    @classmethod
    def zeros(cls, d_in, d_h):
        shape = (d_h, d_h + d_in)
        return cls(*(np.zeros(shape) for _ in range(3)), *(np.zeros(d_h) for _ in range(3)))


@dataclass
class LstmLayer:
    W_f: np.ndarray
    W_i: np.ndarray
    W_c: np.ndarray
    W_h: np.ndarray
    b_f: np.ndarray
    b_i: np.ndarray
    b_c: np.ndarray
    b_h: np.ndarray

    names = ("W_f", "W_i", "W_c", "W_h", "b_f", "b_i", "b_c", "b_h")

    @property
    def d_h(self):
        return self.W_f.shape[0]

    @property
    def d_in(self):
        return self.W_f.shape[1] - self.W_f.shape[0]

    @classmethod
    def init(cls, d_in, d_h, rng):
        shape = (d_h, d_h + d_in)
        Ws = [xavier_init(shape, rng=rng) for _ in range(4)]
        # forget bias starts at one
        return cls(*Ws, np.ones(d_h), np.zeros(d_h), np.zeros(d_h), np.zeros(d_h))

    @classmethod
    def zeros(cls, d_in, d_h):
        shape = (d_h, d_h + d_in)
        return cls(*(np.zeros(shape) for _ in range(4)), *(np.zeros(d_h) for _ in range(4)))


def _check(layer, x, h):
    if x.shape[-1] != layer.d_in or h.shape[-1] != layer.d_h:
        raise InvalidDimensionError(
            f"layer expects input {layer.d_in} / state {layer.d_h}, got {x.shape[-1]} / {h.shape[-1]}"
        )


def gru_forward(layer: GruLayer, x, h_prev):
    """One GRU step. Returns ``(h, cache)``."""
    x = np.asarray(x, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    _check(layer, x, h_prev)
    hx = np.concatenate([h_prev, x], axis=-1)
    z = sigmoid(hx @ layer.W_z.T + layer.b_z)
    r = sigmoid(hx @ layer.W_r.T + layer.b_r)
    hx_r = np.concatenate([r * h_prev, x], axis=-1)
    c = np.tanh(hx_r @ layer.W_h.T + layer.b_h)
    h = (1.0 - z) * h_prev + z * c
    return h, (hx, hx_r, z, r, c, h_prev)


def gru_backward(layer: GruLayer, dh, cache, grads):
    """Backpropagate ``dh`` through one GRU step; accumulates into ``grads``."""
    hx, hx_r, z, r, c, h_prev = cache
    n = layer.d_h
    dz = dh * (c - h_prev)
    dc = dh * z
    dh_prev = dh * (1.0 - z)
    da_c = dc * (1.0 - c * c)
    grads["W_h"] += da_c.T @ hx_r
    grads["b_h"] += da_c.sum(axis=0)
    dhx_r = da_c @ layer.W_h
    drh = dhx_r[:, :n]
    dx = dhx_r[:, n:].copy()
    dr = drh * h_prev
    dh_prev += drh * r
    da_z = dz * z * (1.0 - z)
    da_r = dr * r * (1.0 - r)
    grads["W_z"] += da_z.T @ hx
    grads["b_z"] += da_z.sum(axis=0)
    grads["W_r"] += da_r.T @ hx
    grads["b_r"] += da_r.sum(axis=0)
    dhx = da_z @ layer.W_z + da_r @ layer.W_r
    dh_prev += dhx[:, :n]
    dx += dhx[:, n:]
    return dx, dh_prev


def lstm_forward(layer: LstmLayer, x, h_prev, c_prev):
    """One LSTM step. Returns ``(h, c, cache)``."""
    x = np.asarray(x, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    c_prev = np.asarray(c_prev, dtype=np.float64)
    _check(layer, x, h_prev)
    hx = np.concatenate([h_prev, x], axis=-1)
    gf = sigmoid(hx @ layer.W_f.T + layer.b_f)
    gi = sigmoid(hx @ layer.W_i.T + layer.b_i)
    cc = np.tanh(hx @ layer.W_c.T + layer.b_c)
    go = sigmoid(hx @ layer.W_h.T + layer.b_h)
    c = gf * c_prev + gi * cc
    tc = np.tanh(c)
    h = go * tc
    return h, c, (hx, gf, gi, cc, go, c_prev, tc)


def lstm_backward(layer: LstmLayer, dh, dc, cache, grads):
    hx, gf, gi, cc, go, c_prev, tc = cache
    n = layer.d_h
    dgo = dh * tc
    dc = dc + dh * go * (1.0 - tc * tc)
    da_f = dc * c_prev * gf * (1.0 - gf)
    da_i = dc * cc * gi * (1.0 - gi)
    da_c = dc * gi * (1.0 - cc * cc)
    da_o = dgo * go * (1.0 - go)
    dc_prev = dc * gf
    dhx = np.zeros_like(hx)
    for name, da in (("f", da_f), ("i", da_i), ("c", da_c), ("h", da_o)):
        grads["W_" + name] += da.T @ hx
        grads["b_" + name] += da.sum(axis=0)
        dhx += da @ getattr(layer, "W_" + name)
    return dhx[:, n:], dhx[:, :n], dc_prev


# ----------------------------------------------------------------------------
# stacked model


@dataclass
class GatedRnnModel:
    """Stacked GRU/LSTM cells with a linear readout ``o_hat = W_o h_top``.

    Layers after the first add their input to their output (residual stacking).
    """

    cell_kind: str
    layers: list
    W_o: np.ndarray

    def __post_init__(self):
        if self.cell_kind not in ("gru", "lstm"):
            raise ValueError(f"cell_kind must be 'gru' or 'lstm', got {self.cell_kind!r}")
        for k, layer in enumerate(self.layers):
            if k > 0 and layer.d_in != self.d_h:
                raise InvalidDimensionError("layers after the first must have input size d_h")

    @property
    def d_in(self):
        return self.layers[0].d_in

    @property
    def d_h(self):
        return self.layers[0].d_h

    @property
    def d_o(self):
        return self.W_o.shape[0]

    @property
    def layer_count(self):
        return len(self.layers)

    @classmethod
    def create(cls, cell_kind, d_in, d_h, d_o=None, layer_count=1, seed=0):
        rng = np.random.default_rng(seed)
        d_o = d_in if d_o is None else d_o
        cell = GruLayer if cell_kind == "gru" else LstmLayer
        layers = [cell.init(d_in if k == 0 else d_h, d_h, rng) for k in range(layer_count)]
        return cls(cell_kind, layers, xavier_init((d_o, d_h), rng=rng))

    def zero_state(self, batch=None):
        shape = (self.d_h,) if batch is None else (batch, self.d_h)
        if self.cell_kind == "gru":
            return [np.zeros(shape) for _ in self.layers]
        return [(np.zeros(shape), np.zeros(shape)) for _ in self.layers]

    def step(self, o, hidden):
        return rnn_forward(self, o, hidden)

    def parameters(self):
        """Flat name -> array mapping (arrays are shared, not copied)."""
        out = {}
        for k, layer in enumerate(self.layers):
            for name in layer.names:
                out[f"{k}.{name}"] = getattr(layer, name)
        out["W_o"] = self.W_o
        return out

    def copy(self):
        cell = type(self.layers[0])
        layers = [cell(*(getattr(l, n).copy() for n in l.names)) for l in self.layers]
        return GatedRnnModel(self.cell_kind, layers, self.W_o.copy())

    def nbytes(self):
        return sum(a.nbytes for a in self.parameters().values())

    # Lyapunov support (single-layer GRU only)

    def _single_gru(self):
        from .errors import UnsupportedModelError

        if self.cell_kind != "gru" or self.layer_count != 1:
            raise UnsupportedModelError(
                "Jacobians are available for single-layer GRU models only"
            )
        return self.layers[0]

    def jacobians(self, o, hidden):
        """``(J1, J2, J0)``: d h'/d h, d h'/d o at (o, h), and the readout Jacobian."""
        layer = self._single_gru()
        h = hidden[0]
        n = layer.d_h
        hx = np.concatenate([h, o])
        z = sigmoid(layer.W_z @ hx + layer.b_z)
        r = sigmoid(layer.W_r @ hx + layer.b_r)
        c = np.tanh(layer.W_h @ np.concatenate([r * h, o]) + layer.b_h)
        sz = (c - h) * z * (1.0 - z)
        sc = z * (1.0 - c * c)
        sr = r * (1.0 - r)
        Wzh, Wzo = layer.W_z[:, :n], layer.W_z[:, n:]
        Wrh, Wro = layer.W_r[:, :n], layer.W_r[:, n:]
        Whh, Who = layer.W_h[:, :n], layer.W_h[:, n:]
        # d(r*h)/dh = diag(r) + diag(h * sr) Wrh ; d(r*h)/do = diag(h * sr) Wro
        drh_dh = np.diag(r) + (h * sr)[:, None] * Wrh
        drh_do = (h * sr)[:, None] * Wro
        J1 = np.diag(1.0 - z) + sz[:, None] * Wzh + sc[:, None] * (Whh @ drh_dh)
        J2 = sz[:, None] * Wzo + sc[:, None] * (Whh @ drh_do + Who)
        return J1, J2, self.W_o.copy()

    def closed_loop_tangent(self, hidden, dH):
        """Closed-loop step ``h -> f(W_o h, h)`` and its JVP on the columns of dH."""
        layer = self._single_gru()
        h = hidden[0]
        n = layer.d_h
        o = self.W_o @ h
        dO = self.W_o @ dH
        hx = np.concatenate([h, o])
        dHX = np.vstack([dH, dO])
        z = sigmoid(layer.W_z @ hx + layer.b_z)
        r = sigmoid(layer.W_r @ hx + layer.b_r)
        dz = (z * (1.0 - z))[:, None] * (layer.W_z @ dHX)
        dr = (r * (1.0 - r))[:, None] * (layer.W_r @ dHX)
        c = np.tanh(layer.W_h @ np.concatenate([r * h, o]) + layer.b_h)
        drh = dr * h[:, None] + r[:, None] * dH
        dc = (1.0 - c * c)[:, None] * (layer.W_h[:, :n] @ drh + layer.W_h[:, n:] @ dO)
        h_new = (1.0 - z) * h + z * c
        dh_new = dz * (c - h)[:, None] + (1.0 - z)[:, None] * dH + z[:, None] * dc
        return [h_new], dh_new


def rnn_forward(model: GatedRnnModel, o_t, hidden):
    """One step of the stacked network. Returns ``(prediction, hidden')``."""
    x = np.asarray(o_t, dtype=np.float64)
    new_hidden = []
    for k, layer in enumerate(model.layers):
        if model.cell_kind == "gru":
            h, _ = gru_forward(layer, x, hidden[k])
            new_hidden.append(h)
        else:
            h, c, _ = lstm_forward(layer, x, *hidden[k])
            new_hidden.append((h, c))
        x = h + x if k > 0 else h
    return x @ model.W_o.T, new_hidden


# ----------------------------------------------------------------------------
# BPTT


@dataclass
class Masks:
    """Per-window regularization masks; ``None`` entries disable that mask."""

    zoneout: list | None = None  # per layer, (B, d_h), 1 = take the new value
    output: np.ndarray | None = None  # (B, d_h), already divided by keep probability


def _zero_grads(model):
    return [{n: np.zeros_like(getattr(l, n)) for n in l.names} for l in model.layers], np.zeros_like(
        model.W_o
    )


def bptt_gradients(model: GatedRnnModel, inputs, targets, h_init, masks=None, stride=None):
    """Loss and gradients for one truncated-BPTT window.

    Parameters
    ----------
    inputs : ndarray, shape (kappa2 + kappa1, B, d_in)
        Teacher-forced inputs. The cell is applied once per row.
    targets : ndarray, shape (kappa1, B, d_o)
        Targets for the predictions made after the last ``kappa1`` inputs.
        Predictions after the first ``kappa2`` inputs are not scored.
    h_init : list
        Per-layer hidden state at the start of the window (batched).
    stride : int, optional
        If given, also return the hidden state after ``stride`` steps.

    Returns
    -------
    loss : float
        Mean squared error over the scored steps, batch and components.
    grads : dict
        Same keys as :meth:`GatedRnnModel.parameters`.
    h_stride : list or None
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    T, B = inputs.shape[:2]
    k1 = targets.shape[0]
    if k1 < 1 or k1 > T:
        raise InvalidDimensionError("need 1 <= kappa1 <= window length")
    masks = masks or Masks()
    gru = model.cell_kind == "gru"
    L = model.layer_count
    zo = masks.zoneout

    hidden = [s for s in h_init]
    caches = []  # per step: list over layers of (cache, layer input, prev hidden)
    tops = []
    h_stride = None
    for t in range(T):
        x = inputs[t]
        step_cache = []
        new_hidden = []
        for k, layer in enumerate(model.layers):
            if gru:
                h_prev = hidden[k]
                h_cell, cache = gru_forward(layer, x, h_prev)
                h = h_cell if zo is None else zo[k] * h_cell + (1 - zo[k]) * h_prev
                new_hidden.append(h)
            else:
                h_prev, c_prev = hidden[k]
                h_cell, c_cell, cache = lstm_forward(layer, x, h_prev, c_prev)
                if zo is None:
                    h, c = h_cell, c_cell
                else:
                    h = zo[k] * h_cell + (1 - zo[k]) * h_prev
                    c = zo[k] * c_cell + (1 - zo[k]) * c_prev
                new_hidden.append((h, c))
            step_cache.append(cache)
            x = h + x if k > 0 else h
        hidden = new_hidden
        caches.append(step_cache)
        tops.append(x)
        if stride is not None and t + 1 == stride:
            h_stride = [s.copy() if gru else (s[0].copy(), s[1].copy()) for s in hidden]

    first = T - k1
    outs = np.stack(tops[first:])
    if masks.output is not None:
        outs = outs * masks.output
    preds = outs @ model.W_o.T
    err = preds - targets
    loss = float(np.mean(err * err))
    if not np.isfinite(loss):
        raise TrainingDivergenceError("non-finite loss")
    dpred = 2.0 * err / err.size

    layer_grads, dW_o = _zero_grads(model)
    dW_o += np.einsum("tbo,tbh->oh", dpred, outs)
    dtops = dpred @ model.W_o
    if masks.output is not None:
        dtops = dtops * masks.output

    dh_carry = [np.zeros((B, model.d_h)) for _ in range(L)]
    dc_carry = [np.zeros((B, model.d_h)) for _ in range(L)] if not gru else None
    for t in range(T - 1, -1, -1):
        dx = dtops[t - first] if t >= first else np.zeros((B, model.d_h))
        for k in range(L - 1, -1, -1):
            layer = model.layers[k]
            cache = caches[t][k]
            # output of layer k is h_k (+ its input for k > 0)
            dh = dx + dh_carry[k]
            d_res = dx if k > 0 else None
            if zo is None:
                dh_cell, dh_keep = dh, None
            else:
                dh_cell, dh_keep = dh * zo[k], dh * (1 - zo[k])
            if gru:
                d_in, dh_prev = gru_backward(layer, dh_cell, cache, layer_grads[k])
            else:
                dc = dc_carry[k]
                if zo is None:
                    dc_cell, dc_keep = dc, None
                else:
                    dc_cell, dc_keep = dc * zo[k], dc * (1 - zo[k])
                d_in, dh_prev, dc_prev = lstm_backward(layer, dh_cell, dc_cell, cache, layer_grads[k])
                if dc_keep is not None:
                    dc_prev = dc_prev + dc_keep
                dc_carry[k] = dc_prev
            if dh_keep is not None:
                dh_prev = dh_prev + dh_keep
            dh_carry[k] = dh_prev
            dx = d_in + d_res if d_res is not None else d_in

    grads = {}
    for k, g in enumerate(layer_grads):
        for name, arr in g.items():
            grads[f"{k}.{name}"] = arr
    grads["W_o"] = dW_o
    return loss, grads, h_stride


# ----------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros_like(cls, params):
        return cls({k: np.zeros_like(p) for k, p in params.items()}, {k: np.zeros_like(p) for k, p in params.items()})


def adam_update(params, grads, state: AdamState, lr):
    """Bias-corrected Adam step, applied in place. Returns ``(params, state)``."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for k, p in params.items():
        g = grads[k]
        m = state.m[k]
        v = state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
    return params, state


def clip_gradients(grads, max_norm=CLIP_NORM):
    norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


# ----------------------------------------------------------------------------
# training loop


@dataclass(frozen=True)
class BpttConfig:
    kappa1: int = 1
    kappa2: int = 8
    kappa3: int | None = None
    batch_size: int = 32
    zoneout_keep: float = 1.0
    noise_level: float = 0.0
    lr0: float = 1e-3
    n_rounds: int = 10
    patience: int = 20
    max_epochs: int = 200
    validation_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.kappa1 < 1 or self.kappa2 < 0:
            raise ValueError("need kappa1 >= 1 and kappa2 >= 0")
        expected = self.kappa2 + self.kappa1 - 1
        if self.kappa3 is None:
            object.__setattr__(self, "kappa3", expected)
        elif self.kappa3 != expected:
            raise ValueError(f"kappa3 must equal kappa2 + kappa1 - 1 = {expected}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0 < self.zoneout_keep <= 1:
            raise ValueError("zoneout_keep must lie in (0, 1]")

    @property
    def window(self):
        return self.kappa2 + self.kappa1


@dataclass
class TrainingReport:
    epochs: list = field(default_factory=list)  # dicts: round, epoch, lr, train_loss, val_loss
    best_val: float = np.inf
    best_epoch: tuple = (-1, -1)
    diverged_rounds: list = field(default_factory=list)

    def to_text(self):
        lines = ["round,epoch,lr,train_loss,val_loss"]
        for e in self.epochs:
            lines.append(f"{e['round']},{e['epoch']},{e['lr']:.6g},{e['train_loss']:.10g},{e['val_loss']:.10g}")
        lines.append(f"# best_val={self.best_val:.10g} at round {self.best_epoch[0]} epoch {self.best_epoch[1]}")
        return "\n".join(lines) + "\n"


def _slice_hidden(hidden, idx, gru):
    if gru:
        return [h[idx] for h in hidden]
    return [(h[idx], c[idx]) for h, c in hidden]


def validation_loss(model, x, y, n_streams=8, warmup=50):
    """Teacher-forced one-step MSE over contiguous chunks of (x, y)."""
    n = len(x)
    n_streams = max(1, min(n_streams, n // (2 * warmup + 1)))
    length = n // n_streams
    if length <= warmup:
        warmup = 0
    xs = x[: n_streams * length].reshape(n_streams, length, -1).transpose(1, 0, 2)
    ys = y[: n_streams * length].reshape(n_streams, length, -1).transpose(1, 0, 2)
    hidden = model.zero_state(n_streams)
    total, count = 0.0, 0
    for t in range(length):
        pred, hidden = rnn_forward(model, xs[t], hidden)
        if t >= warmup:
            total += float(np.sum((pred - ys[t]) ** 2))
            count += pred.size
    return total / max(count, 1)


def _draw_masks(model, cfg, B, rng):
    if cfg.zoneout_keep >= 1.0:
        return None
    p = cfg.zoneout_keep
    zo = [(rng.random((B, model.d_h)) < p).astype(np.float64) for _ in model.layers]
    out = (rng.random((B, model.d_h)) < p).astype(np.float64) / p
    return Masks(zo, out)


def train_bptt(model: GatedRnnModel, dataset, cfg: BpttConfig, inputs=None, targets=None):
    """Train ``model`` with the stateful truncated-BPTT epoch scheme.

    By default the model maps ``train[t] -> train[t+1]`` on the training split of
    ``dataset``; ``inputs``/``targets`` (aligned row by row) override that, which
    is how parallel members are trained. Returns ``(best_model, report)``.
    """
    if inputs is None:
        train = dataset.train
        inputs, targets = train[:-1], train[1:]
        sigma = dataset.std
    else:
        sigma = np.asarray(inputs).std(axis=0)
    inputs = np.asarray(inputs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    n_val = int(round(cfg.validation_fraction * len(inputs)))
    x_tr, y_tr = inputs[: len(inputs) - n_val], targets[: len(inputs) - n_val]
    x_val, y_val = inputs[len(inputs) - n_val :], targets[len(inputs) - n_val :]
    W = cfg.window
    if len(x_tr) < 2 * W:
        raise ValueError("training split too short for the BPTT window")
    if n_val == 0:
        x_val, y_val = x_tr, y_tr

    rng = np.random.default_rng(cfg.seed)
    gru = model.cell_kind == "gru"
    model = model.copy()
    params = model.parameters()
    best = model.copy()
    report = TrainingReport()
    report.best_val = validation_loss(model, x_val, y_val)
    s_max = len(x_tr) - W
    k1, k3 = cfg.kappa1, cfg.kappa3
    offsets = np.arange(W)
    noise_scale = cfg.noise_level * sigma

    lr = cfg.lr0
    for rnd in range(cfg.n_rounds):
        if rnd > 0:
            model = best.copy()
            params = model.parameters()
        adam = AdamState.zeros_like(params)
        stall = 0
        diverged = False
        for epoch in range(cfg.max_epochs):
            unvisited = np.ones(s_max + 1, dtype=bool)
            losses = []
            while unvisited.any() and not diverged:
                cand = np.flatnonzero(unvisited)
                pos = np.sort(rng.choice(cand, size=min(cfg.batch_size, len(cand)), replace=False))
                hidden = model.zero_state(len(pos))
                while len(pos):
                    win = pos[:, None] + offsets[None, :]
                    xb = x_tr[win].transpose(1, 0, 2)
                    yb = y_tr[win[:, W - k1 :]].transpose(1, 0, 2)
                    if cfg.noise_level > 0:
                        xb = xb + rng.standard_normal(xb.shape) * noise_scale
                    masks = _draw_masks(model, cfg, len(pos), rng)
                    try:
                        loss, grads, h_next = bptt_gradients(model, xb, yb, hidden, masks, stride=k3)
                    except TrainingDivergenceError:
                        diverged = True
                        break
                    clip_gradients(grads)
                    adam_update(params, grads, adam, lr)
                    losses.append(loss)
                    for p in pos:
                        unvisited[p : p + k3] = False
                    pos = pos + k3
                    keep = np.flatnonzero(pos <= s_max)
                    keep = keep[unvisited[pos[keep]]]
                    pos = pos[keep]
                    hidden = _slice_hidden(h_next, keep, gru)
            if diverged:
                report.diverged_rounds.append(rnd)
                log.warning("round %d diverged; restoring best weights", rnd)
                break
            val = validation_loss(model, x_val, y_val)
            if not np.isfinite(val):
                report.diverged_rounds.append(rnd)
                break
            report.epochs.append(
                dict(round=rnd, epoch=epoch, lr=lr, train_loss=float(np.mean(losses)), val_loss=val)
            )
            log.info("round %d epoch %d lr %.1e train %.4g val %.4g", rnd, epoch, lr, np.mean(losses), val)
            if val < report.best_val:
                report.best_val = val
                report.best_epoch = (rnd, epoch)
                best = model.copy()
                stall = 0
            else:
                stall += 1
            if stall >= cfg.patience:
                break
        lr /= 10.0
    return best, report
