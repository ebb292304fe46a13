"""Time series container and its binary file format.

A ``.chf`` file stores one :class:`TimeSeriesDataset`::

    b"CHF1"
    u32   d_o
    u64   N
    f64   dt
    u64   split             (first test row)
    f64   values[N, d_o]    (row-major)
    f64   mean[d_o], std[d_o]

All integers and floats are little-endian.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidDimensionError

MAGIC = b"CHF1"
_HEADER = struct.Struct("<4sIQdQ")


@dataclass
class TimeSeriesDataset:
    """Sampled trajectory of an observable.

    Parameters
    ----------
    values : ndarray, shape (N, d_o)
    dt : float
        Sampling interval.
    split : int
        Rows ``[0, split)`` are training data, ``[split, N)`` test data.
    mean, std : ndarray, shape (d_o,), optional
        Per-component statistics. Computed on the training rows when omitted.
    """

    values: np.ndarray
    dt: float
    split: int
    mean: np.ndarray = field(default=None)
    std: np.ndarray = field(default=None)

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise InvalidDimensionError("values must be a 2-D (N, d_o) array")
        if not 0 <= self.split <= len(self.values):
            raise ValueError(f"split {self.split} outside [0, {len(self.values)}]")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        ref = self.values[: self.split] if self.split > 1 else self.values
        if self.mean is None:
            self.mean = ref.mean(axis=0)
        if self.std is None:
            self.std = ref.std(axis=0)
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)

    @property
    def n_samples(self):
        return self.values.shape[0]

    @property
    def d_o(self):
        return self.values.shape[1]

    @property
    def train(self):
        return self.values[: self.split]

    @property
    def test(self):
        return self.values[self.split :]

    def normalized(self):
        """Return a copy standardized with the stored statistics (mean 0, std 1)."""
        if np.any(self.std <= 0):
            raise ValueError("cannot normalize: zero standard deviation component")
        vals = (self.values - self.mean) / self.std
        return TimeSeriesDataset(
            vals, self.dt, self.split, np.zeros(self.d_o), np.ones(self.d_o)
        )

    def with_values(self, values, mean=None, std=None):
        """Same sampling and split with new values (e.g. projected coordinates)."""
        return TimeSeriesDataset(values, self.dt, self.split, mean, std)

    def to_bytes(self):
        head = _HEADER.pack(MAGIC, self.d_o, self.n_samples, float(self.dt), self.split)
        return b"".join(
            [
                head,
                self.values.astype("<f8").tobytes(order="C"),
                self.mean.astype("<f8").tobytes(),
                self.std.astype("<f8").tobytes(),
            ]
        )

    @classmethod
    def from_bytes(cls, buf):
        if len(buf) < _HEADER.size:
            raise ValueError("truncated dataset header")
        magic, d_o, n, dt, split = _HEADER.unpack_from(buf, 0)
        if magic != MAGIC:
            raise ValueError(f"bad dataset magic {magic!r}")
        need = _HEADER.size + 8 * (n * d_o + 2 * d_o)
        if len(buf) != need:
            raise ValueError(f"dataset size {len(buf)} != expected {need}")
        body = np.frombuffer(buf, dtype="<f8", offset=_HEADER.size)
        values = body[: n * d_o].reshape(n, d_o).astype(np.float64)
        mean = body[n * d_o : n * d_o + d_o].astype(np.float64)
        std = body[n * d_o + d_o :].astype(np.float64)
        return cls(values, dt, int(split), mean, std)

    def save(self, path):
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path):
        return cls.from_bytes(Path(path).read_bytes())
