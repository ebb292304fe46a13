"""Reduced-order observables from the SVD of mean-subtracted data."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidDimensionError, InvalidRankError


@dataclass(frozen=True)
class SvdBasis:
    mean: np.ndarray
    modes: np.ndarray  # (d, r), orthonormal columns
    singular_values: np.ndarray  # (d,), descending

    @property
    def r(self):
        return self.modes.shape[1]

    @property
    def d(self):
        return self.modes.shape[0]


def fit_svd(train_values, r) -> SvdBasis:
    """Top-``r`` right singular vectors of the mean-subtracted ``(N, d)`` data.

    The modes come from the eigendecomposition of the ``d x d`` Gram matrix
    ``X^T X``; singular values are then measured as ``||X v_i||`` so small ones
    keep full relative accuracy. Each mode is signed so that its
    largest-magnitude entry is positive.
    """
    X = np.asarray(train_values, dtype=np.float64)
    if X.ndim != 2:
        raise InvalidDimensionError("training data must be a 2-D (N, d) array")
    d = X.shape[1]
    if not 0 < r <= d:
        raise InvalidRankError(f"rank r={r} must lie in [1, {d}]")
    mean = X.mean(axis=0)
    Xc = X - mean
    _, V = np.linalg.eigh(Xc.T @ Xc)
    V = V[:, ::-1]
    sv = np.linalg.norm(Xc @ V, axis=0)
    order = np.argsort(-sv, kind="stable")
    V, sv = V[:, order], sv[order]
    pivot = np.argmax(np.abs(V), axis=0)
    V = V * np.sign(V[pivot, np.arange(d)])[None, :]
    return SvdBasis(mean, np.ascontiguousarray(V[:, :r]), sv)


def project(basis: SvdBasis, state):
    """Mode coefficients ``modes^T (state - mean)``; works row-wise on stacks."""
    state = np.asarray(state, dtype=np.float64)
    if state.shape[-1] != basis.d:
        raise InvalidDimensionError(f"state has {state.shape[-1]} components, basis {basis.d}")
    return (state - basis.mean) @ basis.modes


def reconstruct(basis: SvdBasis, coeffs):
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.shape[-1] != basis.r:
        raise InvalidDimensionError(f"got {coeffs.shape[-1]} coefficients, basis has {basis.r} modes")
    return basis.mean + coeffs @ basis.modes.T


def energy_fraction(basis: SvdBasis, k):
    if not 0 <= k <= basis.d:
        raise InvalidRankError(f"k={k} must lie in [0, {basis.d}]")
    s2 = basis.singular_values**2
    total = s2.sum()
    return float(s2[:k].sum() / total) if total > 0 else 1.0


def reduce_dataset(dataset, r):
    """Fit a basis on the training split and project the whole series.

    Returns ``(reduced_dataset, basis)``.
    """
    basis = fit_svd(dataset.train, r)
    return dataset.with_values(project(basis, dataset.values)), basis
