"""Discrete differential operators.

Spatial side: a mesh Laplacian assembled from 1-ring geometry, where the
value at an intersection point a distance r_i along each edge is obtained
by linear interpolation and then eliminated analytically, leaving constant
matrix entries 4/(r_i * n_i * d_ij).

Temporal side: a five-point fourth-order scheme — the centered stencil in
the interior and one-sided stencils at the first and last two samples.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .mesh import Adjacency

__all__ = [
    "LaplacianOperator", "TemporalGrid", "laplacian_matrix",
    "temporal_derivative", "stencil_matrix", "regular_grid_laplacian_check",
    "INTERIOR_STENCIL", "BOUNDARY_STENCILS",
]

# coefficients are multiples of 1/(12*tau)
INTERIOR_STENCIL = np.array([1.0, -8.0, 0.0, 8.0, -1.0])
BOUNDARY_STENCILS = {
    0: np.array([-25.0, 48.0, -36.0, 16.0, -3.0]),
    1: np.array([-3.0, -10.0, 18.0, -6.0, 1.0]),
    -2: np.array([-1.0, 6.0, -18.0, 10.0, 3.0]),
    -1: np.array([3.0, -16.0, 36.0, -48.0, 25.0]),
}


@dataclass(frozen=True)
class TemporalGrid:
    """Uniform time sampling: `count` samples spaced `tau` apart."""

    tau: float
    count: int

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.count < 2:
            raise ValueError(f"need at least 2 samples, got {self.count}")

    @property
    def duration(self):
        return self.tau * (self.count - 1)

    def times(self):
        return np.arange(self.count) * self.tau


@dataclass(frozen=True)
class LaplacianOperator:
    """Sparse V x V mesh Laplacian tied to its source adjacency."""

    matrix: sp.csr_matrix
    adjacency: Adjacency

    def apply(self, field):
        """Apply to a (V,) vector or (V, T) matrix of samples."""
        return self.matrix @ np.asarray(field, dtype=float)

    @property
    def shape(self):
        return self.matrix.shape


def laplacian_matrix(adj: Adjacency) -> LaplacianOperator:
    """Assemble the mesh Laplacian from 1-ring adjacency.

    Off-diagonal (i, j) entries are 4/(r_i n_i d_ij) for j in N(i); the
    diagonal is -(4/(r_i n_i)) * sum_j 1/d_ij, so rows sum to zero and
    constant fields map to zero exactly.
    """
    nv = adj.n_vertices
    rows, cols, vals = [], [], []
    for i in range(nv):
        nb = adj.neighbors[i]
        d = adj.distances[i]
        coef = 4.0 / (adj.ring_radius[i] * len(nb))
        w = coef / d
        rows.extend([i] * len(nb))
        cols.extend(nb.tolist())
        vals.extend(w.tolist())
        rows.append(i)
        cols.append(i)
        vals.append(-w.sum())
    m = sp.csr_matrix((vals, (rows, cols)), shape=(nv, nv))
    return LaplacianOperator(m, adj)


def stencil_matrix(count: int, tau: float) -> sp.csr_matrix:
    """(count x count) matrix mapping samples to temporal derivatives.

    Instances are memoized by (count, tau); callers must not mutate the
    returned matrix.
    """
    return _stencil_matrix_cached(count, float(tau))


@functools.lru_cache(maxsize=64)
def _stencil_matrix_cached(count: int, tau: float) -> sp.csr_matrix:
    if count < 5:
        raise ValueError(f"need at least 5 samples, got {count}")
    rows, cols, vals = [], [], []
    for i in range(count):
        if 2 <= i <= count - 3:
            coeffs, start = INTERIOR_STENCIL, i - 2
        elif i in (0, 1):
            coeffs, start = BOUNDARY_STENCILS[i], 0
        else:
            coeffs, start = BOUNDARY_STENCILS[i - count], count - 5
        for k, c in enumerate(coeffs):
            if c != 0.0:
                rows.append(i)
                cols.append(start + k)
                vals.append(c / (12.0 * tau))
    return sp.csr_matrix((vals, (rows, cols)), shape=(count, count))


def temporal_derivative(series, grid: TemporalGrid):
    """Fourth-order temporal derivative of uniformly sampled data.

    `series` is a length-(count) vector or a (V, count) matrix sampled
    along its last axis.
    """
    u = np.asarray(series, dtype=float)
    if u.shape[-1] != grid.count:
        raise ValueError(
            f"series has {u.shape[-1]} samples, grid expects {grid.count}")
    if u.shape[-1] < 5:
        raise ValueError("series shorter than 5 samples")
    D = stencil_matrix(grid.count, grid.tau)
    if u.ndim == 1:
        return D @ u
    return (D @ u.T).T


def regular_grid_laplacian_check(d: float, u0: float, neighbors) -> float:
    """Flat-geometry oracle: Laplacian on a square grid of spacing d,
    4/d^2 * (mean(neighbors) - u0)."""
    if d <= 0:
        raise ValueError("spacing d must be positive")
    nb = np.asarray(neighbors, dtype=float)
    if nb.shape != (4,):
        raise ValueError("expected exactly 4 neighbor values")
    return 4.0 / d ** 2 * (nb.mean() - u0)
