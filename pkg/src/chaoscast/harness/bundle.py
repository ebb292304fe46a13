"""Binary model bundles.

Layout (little-endian)::

    b"CHMB"  u32 version  u8 family  u32 n_blocks
    n_blocks x [ u16 name_len, name (utf-8), u8 ndim, ndim x u64 dim, u64 count, count x f64 ]

Integer data (sparse indices, hyperparameters) are stored as f64, which is
exact below 2**53. A parallel model is saved as a plain-text manifest naming
one bundle file per member.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from ..errors import (
    BundleDimensionError,
    BundleError,
    BundleMagicError,
    BundleTruncatedError,
    BundleVersionError,
)
from ..gated_rnn import GatedRnnModel, GruLayer, LstmLayer
from ..parallel import ParallelModel, decompose
from ..reduction import SvdBasis
from ..reservoir import ReservoirModel, ReservoirParams

MAGIC = b"CHMB"
VERSION = 1
MANIFEST_HEADER = "CHAOSCAST-PARALLEL 1"

FAMILY_RC, FAMILY_GRU, FAMILY_LSTM, FAMILY_SVD = 1, 2, 3, 4
_FAMILIES = {FAMILY_RC: "rc", FAMILY_GRU: "gru", FAMILY_LSTM: "lstm", FAMILY_SVD: "svd"}

_HEAD = struct.Struct("<4sIBI")


# ----------------------------------------------------------------------------
# block codec


def encode(family, blocks):
    parts = [_HEAD.pack(MAGIC, VERSION, family, len(blocks))]
    for name, arr in blocks.items():
        arr = np.asarray(arr, dtype="<f8")
        raw = name.encode()
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack(f"<B{arr.ndim}Q", arr.ndim, *arr.shape))
        parts.append(struct.pack("<Q", arr.size))
        parts.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, fmt):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.buf):
            raise BundleTruncatedError(f"bundle truncated at byte {self.pos}")
        out = struct.unpack_from(fmt, self.buf, self.pos)
        self.pos += size
        return out

    def raw(self, n):
        if self.pos + n > len(self.buf):
            raise BundleTruncatedError(f"bundle truncated at byte {self.pos}")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out


def decode(buf):
    """Return ``(family, {name: array})``."""
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise BundleMagicError(f"not a model bundle (magic {bytes(buf[:4])!r})")
    r = _Reader(buf)
    _, version, family, n_blocks = r.take("<4sIBI")
    if version != VERSION:
        raise BundleVersionError(f"bundle version {version}, this reader supports {VERSION}")
    if family not in _FAMILIES:
        raise BundleError(f"unknown model family tag {family}")
    blocks = {}
    for _ in range(n_blocks):
        (n,) = r.take("<H")
        name = r.raw(n).decode()
        (ndim,) = r.take("<B")
        shape = r.take(f"<{ndim}Q")
        (count,) = r.take("<Q")
        if int(np.prod(shape)) != count:
            raise BundleDimensionError(f"block {name}: shape {shape} does not hold {count} values")
        data = np.frombuffer(r.raw(8 * count), dtype="<f8").astype(np.float64)
        blocks[name] = data.reshape(shape)
    if r.pos != len(buf):
        raise BundleDimensionError(f"{len(buf) - r.pos} trailing bytes after the last block")
    return family, blocks


def _need(blocks, *names):
    for n in names:
        if n not in blocks:
            raise BundleDimensionError(f"missing block {n!r}")


def _expect(cond, msg):
    if not cond:
        raise BundleDimensionError(msg)


# ----------------------------------------------------------------------------
# families


def _rc_blocks(m: ReservoirModel):
    p = m.params
    W = m.W_hh.tocsr()
    meta = [p.d_h, p.d_o, p.degree, p.rho, p.omega, p.eta, p.noise_level, p.seed, p.n_warmup, p.d_in, float(m.trained)]
    return {
        "meta": np.array(meta, dtype=np.float64),
        "W_in": m.W_in,
        "W_hh.data": W.data,
        "W_hh.indices": W.indices.astype(np.float64),
        "W_hh.indptr": W.indptr.astype(np.float64),
        "W_out": m.W_out,
    }


def _rc_from_blocks(b):
    _need(b, "meta", "W_in", "W_hh.data", "W_hh.indices", "W_hh.indptr", "W_out")
    meta = b["meta"]
    _expect(meta.shape == (11,), "rc meta block must hold 11 values")
    d_h, d_o = int(meta[0]), int(meta[1])
    d_in = int(meta[9])
    params = ReservoirParams(
        d_h=d_h, d_o=d_o, degree=meta[2], rho=meta[3], omega=meta[4], eta=meta[5],
        noise_level=meta[6], seed=int(meta[7]), n_warmup=int(meta[8]), d_in=d_in,
    )
    _expect(b["W_in"].shape == (d_h, d_in), "W_in shape disagrees with meta")
    _expect(b["W_out"].shape == (d_o, d_h), "W_out shape disagrees with meta")
    indptr = b["W_hh.indptr"].astype(np.int64)
    indices = b["W_hh.indices"].astype(np.int64)
    _expect(len(indptr) == d_h + 1 and indptr[-1] == len(indices) == len(b["W_hh.data"]), "W_hh arrays inconsistent")
    _expect(len(indices) == 0 or (indices.min() >= 0 and indices.max() < d_h), "W_hh column index out of range")
    W = sp.csr_matrix((b["W_hh.data"], indices.astype(np.int32), indptr.astype(np.int32)), shape=(d_h, d_h))
    return ReservoirModel(b["W_in"], W, b["W_out"], params, bool(meta[10]))


def _rnn_blocks(m: GatedRnnModel):
    blocks = {"meta": np.array([m.layer_count, m.d_in, m.d_h, m.d_o], dtype=np.float64)}
    blocks.update(m.parameters())
    return blocks


def _rnn_from_blocks(b, kind):
    _need(b, "meta", "W_o")
    n_layers, d_in, d_h, d_o = (int(v) for v in b["meta"])
    cell = GruLayer if kind == "gru" else LstmLayer
    layers = []
    for k in range(n_layers):
        width = (d_in if k == 0 else d_h) + d_h
        arrays = []
        for name in cell.names:
            key = f"{k}.{name}"
            _need(b, key)
            shape = (d_h, width) if name.startswith("W") else (d_h,)
            _expect(b[key].shape == shape, f"{key} has shape {b[key].shape}, expected {shape}")
            arrays.append(b[key])
        layers.append(cell(*arrays))
    _expect(b["W_o"].shape == (d_o, d_h), "W_o shape disagrees with meta")
    return GatedRnnModel(kind, layers, b["W_o"])


def _svd_blocks(basis: SvdBasis):
    return {"mean": basis.mean, "modes": basis.modes, "singular_values": basis.singular_values}


def _svd_from_blocks(b):
    _need(b, "mean", "modes", "singular_values")
    d = len(b["mean"])
    _expect(b["modes"].ndim == 2 and b["modes"].shape[0] == d, "modes shape disagrees with mean")
    _expect(len(b["singular_values"]) == d, "singular value count disagrees with mean")
    return SvdBasis(b["mean"], b["modes"], b["singular_values"])


def to_bytes(obj, extras=None):
    """Serialize an RC, gated RNN or SVD basis; ``extras`` adds named blocks."""
    if isinstance(obj, ReservoirModel):
        family, blocks = FAMILY_RC, _rc_blocks(obj)
    elif isinstance(obj, GatedRnnModel):
        family = FAMILY_GRU if obj.cell_kind == "gru" else FAMILY_LSTM
        blocks = _rnn_blocks(obj)
    elif isinstance(obj, SvdBasis):
        family, blocks = FAMILY_SVD, _svd_blocks(obj)
    else:
        raise TypeError(f"cannot bundle {type(obj).__name__}")
    for k, v in (extras or {}).items():
        blocks[f"extra.{k}"] = v
    return encode(family, blocks)


def from_bytes(buf):
    """Return ``(object, extras)``."""
    family, blocks = decode(buf)
    extras = {k[6:]: v for k, v in blocks.items() if k.startswith("extra.")}
    core = {k: v for k, v in blocks.items() if not k.startswith("extra.")}
    kind = _FAMILIES[family]
    if kind == "rc":
        obj = _rc_from_blocks(core)
    elif kind == "svd":
        obj = _svd_from_blocks(core)
    else:
        obj = _rnn_from_blocks(core, kind)
    return obj, extras


# ----------------------------------------------------------------------------
# files


def _member_name(path, g):
    return f"{path.stem}.member{g:04d}.chmb"


def save_bundle(model, path, extras=None):
    """Write ``model`` to ``path``.

    Parallel models write a text manifest at ``path`` and one bundle per member
    next to it.
    """
    path = Path(path)
    if isinstance(model, ParallelModel):
        dec = model.decomposition
        lines = [MANIFEST_HEADER, f"d_o = {dec.d_o}", f"G = {dec.G}", f"I = {dec.I}", f"members = {dec.N_g}"]
        for g, member in enumerate(model.members):
            name = _member_name(path, g)
            (path.parent / name).write_bytes(to_bytes(member, extras if g == 0 else None))
            lines.append(f"member.{g} = {name}")
        path.write_text("\n".join(lines) + "\n")
        return
    path.write_bytes(to_bytes(model, extras))


def read_bundle(path):
    """Load a bundle or parallel manifest; returns ``(model, extras)``."""
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as err:
        raise BundleError(f"cannot read {path}: {err}") from err
    if buf.startswith(MANIFEST_HEADER.split()[0].encode()):
        return _read_manifest(path, buf.decode())
    return from_bytes(buf)


def load_bundle(path):
    return read_bundle(path)[0]


def _read_manifest(path, text):
    lines = text.splitlines()
    if lines[0].strip() != MANIFEST_HEADER:
        raise BundleVersionError(f"unsupported parallel manifest header {lines[0]!r}")
    kv = {}
    for line in lines[1:]:
        if "=" in line:
            k, v = line.split("=", 1)
            kv[k.strip()] = v.strip()
    try:
        dec = decompose(int(kv["d_o"]), int(kv["G"]), int(kv["I"]))
        n = int(kv["members"])
        names = [kv[f"member.{g}"] for g in range(n)]
    except KeyError as err:
        raise BundleTruncatedError(f"manifest is missing {err}") from None
    if n != dec.N_g:
        raise BundleDimensionError(f"manifest lists {n} members, decomposition needs {dec.N_g}")
    members, extras = [], {}
    for g, name in enumerate(names):
        member, ex = read_bundle(path.parent / name)
        if member.d_in != dec.input_width or member.d_o != dec.G:
            raise BundleDimensionError(f"member {g} maps {member.d_in} -> {member.d_o}, expected {dec.input_width} -> {dec.G}")
        members.append(member)
        extras = extras or ex
    return ParallelModel(dec, members), extras
