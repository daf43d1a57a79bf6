"""Rigid-motion-invariant features: distance matrices, classical
multidimensional scaling, and deterministic canonicalization of the
recovered coordinates.

Everything here runs in float64 regardless of the precision used by the
neural layers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError


@dataclass
class DistanceMatrix:
    """Symmetric pairwise Euclidean distances with a zero diagonal."""

    d: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.d, dtype=np.float64)
        if d.ndim != 2 or d.shape[0] != d.shape[1]:
            raise NumericError(f"distance matrix must be square, got {d.shape}")
        if np.abs(d - d.T).max() > 1e-12:
            raise NumericError("distance matrix is not symmetric to 1e-12")
        if (d < 0).any():
            raise NumericError("distance matrix has negative entries")
        if np.abs(np.diag(d)).max() > 1e-12:
            raise NumericError("distance matrix diagonal is not zero")
        self.d = d

    @property
    def n(self) -> int:
        return self.d.shape[0]


@dataclass
class MdsResult:
    """Recovered coordinates plus the full eigenvalue spectrum (descending)."""

    p_hat: np.ndarray
    eigenvalues: np.ndarray
    rank_used: int


def squared_distances(positions: np.ndarray) -> np.ndarray:
    """Pairwise squared Euclidean distances, exactly symmetric, zero diagonal."""
    p = np.asarray(positions, dtype=np.float64)
    sq = (p * p).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (p @ p.T)
    d2 = np.maximum(d2, 0.0)
    d2 = 0.5 * (d2 + d2.T)
    np.fill_diagonal(d2, 0.0)
    return d2


def distance_matrix(positions: np.ndarray) -> DistanceMatrix:
    """Pairwise Euclidean distance matrix of an (N,3) coordinate array."""
    p = np.asarray(positions, dtype=np.float64)
    if not np.isfinite(p).all():
        raise NumericError("non-finite positions")
    return DistanceMatrix(np.sqrt(squared_distances(p)))


def centering_matrix(n: int) -> np.ndarray:
    """I - (1/n) 11^T; projects out the mean."""
    return np.eye(n) - np.full((n, n), 1.0 / n)


def double_center(dm: DistanceMatrix) -> np.ndarray:
    """Gram matrix of the centered configuration: -1/2 J d^2 J."""
    j = centering_matrix(dm.n)
    b = -0.5 * j @ (dm.d ** 2) @ j
    return 0.5 * (b + b.T)


def mds_embed(dm: DistanceMatrix, k: int = 3) -> MdsResult:
    """Classical multidimensional scaling to k dimensions.

    Eigenvalues of the centered Gram matrix are sorted descending; the top-k
    are clamped at zero before the square root. Columns beyond the number of
    positive eigenvalues are zero, and rank_used records how many were kept.
    """
    b = double_center(dm)
    evals, evecs = np.linalg.eigh(b)           # ascending
    order = np.argsort(-evals, kind="stable")
    evals = evals[order]
    evecs = evecs[:, order]
    n = dm.n
    p_hat = np.zeros((n, k))
    rank_used = 0
    for col in range(min(k, n)):
        lam = evals[col]
        if lam > 0.0:
            p_hat[:, col] = evecs[:, col] * np.sqrt(lam)
            rank_used += 1
    return MdsResult(p_hat, evals, rank_used)


def canonical_signs(p_hat: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Per-column sign fixing: the entry of largest magnitude (lowest row index
    on ties within tol) must be positive. Zero columns keep sign +1."""
    p = np.asarray(p_hat)
    signs = np.ones(p.shape[1])
    for col in range(p.shape[1]):
        mags = np.abs(p[:, col])
        top = mags.max()
        if top == 0.0:
            continue
        pivot = int(np.flatnonzero(mags >= top - tol)[0])
        if p[pivot, col] < 0.0:
            signs[col] = -1.0
    return signs


def canonicalize(result: MdsResult) -> np.ndarray:
    """Deterministic pose for the recovered coordinates.

    Columns are ordered by descending eigenvalue (mds_embed already emits
    them that way) and each column's sign is fixed by canonical_signs, so
    identical distance matrices map to bit-identical coordinates.
    """
    k = result.p_hat.shape[1]
    col_evals = np.full(k, -np.inf)
    avail = min(k, result.eigenvalues.size)
    col_evals[:avail] = result.eigenvalues[:avail]
    order = np.argsort(-col_evals, kind="stable")
    p = result.p_hat[:, order]
    return p * canonical_signs(p)[None, :]


def invariant_coordinates(positions: np.ndarray) -> np.ndarray:
    """distance_matrix -> mds_embed -> canonicalize, as one call."""
    return canonicalize(mds_embed(distance_matrix(positions)))
