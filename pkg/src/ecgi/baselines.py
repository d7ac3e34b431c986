"""Classical inverse solvers: Tikhonov (orders 0/1/2) and a
spatiotemporal quadratic regularizer.

The spatiotemporal objective (labelled "STRE-style" in outputs) is
  || Y - R U ||_F^2 + lam_s^2 ||L U||_F^2 + lam_t^2 ||U D_t'||_F^2
with L the mesh Laplacian and D_t the first-difference operator in time,
solved by conjugate gradients on the vectorized normal equations.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .apsim import SpatioTemporalField
from .forward import Observation, TransferModel
from .mesh import Adjacency
from .ops import LaplacianOperator, TemporalGrid

__all__ = [
    "TikhonovConfig", "StreConfig", "SolverError", "tikhonov", "stre",
    "edge_incidence",
]


class SolverError(RuntimeError):
    """Singular system or non-converged iterative solve."""


@dataclass(frozen=True)
class TikhonovConfig:
    lam: float
    order: int = 2  # 0: identity, 1: edge incidence, 2: mesh Laplacian

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError("lam must be > 0")
        if self.order not in (0, 1, 2):
            raise ValueError("order must be 0, 1, or 2")


@dataclass(frozen=True)
class StreConfig:
    lam_s: float
    lam_t: float

    def __post_init__(self):
        if self.lam_s <= 0 or self.lam_t < 0:
            raise ValueError("weights must be positive (lam_t may be 0)")


def edge_incidence(adj: Adjacency) -> sp.csr_matrix:
    """E x V signed incidence matrix; rows are +1/-1 per edge, so constant
    fields incur zero penalty."""
    rows, cols, vals = [], [], []
    e = 0
    for i in range(adj.n_vertices):
        for j in adj.neighbors[i]:
            if j > i:
                rows += [e, e]
                cols += [i, int(j)]
                vals += [1.0, -1.0]
                e += 1
    return sp.csr_matrix((vals, (rows, cols)), shape=(e, adj.n_vertices))


def _gamma_for(cfg: TikhonovConfig, lap: LaplacianOperator):
    if cfg.order == 0:
        return sp.identity(lap.shape[0], format="csr")
    if cfg.order == 1:
        return edge_incidence(lap.adjacency)
    return lap.matrix


def tikhonov(tm: TransferModel, obs: Observation, cfg: TikhonovConfig,
             lap: LaplacianOperator, grid: TemporalGrid
             ) -> SpatioTemporalField:
    """Per-time-column regularized least squares.

    Solves (R'R + lam^2 G'G) u = R' y by a dense Cholesky factorization;
    the factorization is shared across time columns.
    """
    if tm.n_nodes != lap.shape[0]:
        raise ValueError("transfer matrix and Laplacian disagree on V")
    if obs.y.shape[0] != tm.n_sensors:
        raise ValueError("observation rows do not match sensor count")
    R = tm.R
    G = _gamma_for(cfg, lap)
    A = R.T @ R + cfg.lam ** 2 * np.asarray((G.T @ G).todense())
    try:
        factor = scipy.linalg.cho_factor(A)
    except np.linalg.LinAlgError as exc:
        raise SolverError(
            f"singular Tikhonov system (lam={cfg.lam}, order="
            f"{cfg.order}): {exc}") from exc
    rhs = R.T @ obs.y
    u = scipy.linalg.cho_solve(factor, rhs)
    return SpatioTemporalField(u, grid)


def _first_difference(count):
    d = sp.diags([-np.ones(count - 1), np.ones(count - 1)], [0, 1],
                 shape=(count - 1, count))
    return d.tocsr()


def stre(tm: TransferModel, obs: Observation, cfg: StreConfig,
         lap: LaplacianOperator, grid: TemporalGrid,
         tol: float = 1e-10, maxiter: int = 50000) -> SpatioTemporalField:
    """Spatiotemporal quadratic solve via CG on the normal equations.

    The normal operator is A(U) = R'R U + lam_s^2 L'L U + lam_t^2 U D'D,
    applied matrix-free on the vectorized unknowns.
    """
    nv = tm.n_nodes
    nt = obs.y.shape[1]
    if nv != lap.shape[0]:
        raise ValueError("transfer matrix and Laplacian disagree on V")
    R = tm.R
    RtR = R.T @ R
    L = lap.matrix
    LtL = (L.T @ L).tocsr()
    D = _first_difference(nt)
    DtD = (D.T @ D).tocsr()
    rhs = (R.T @ obs.y).ravel()

    def matvec(x):
        U = x.reshape(nv, nt)
        out = RtR @ U + cfg.lam_s ** 2 * (LtL @ U)
        if cfg.lam_t > 0:
            out = out + cfg.lam_t ** 2 * (DtD @ U.T).T
        return out.ravel()

    A = spla.LinearOperator((nv * nt, nv * nt), matvec=matvec)
    x, info = spla.cg(A, rhs, rtol=tol, atol=0.0, maxiter=maxiter)
    if info != 0:
        resid = np.linalg.norm(matvec(x) - rhs) / np.linalg.norm(rhs)
        raise SolverError(
            f"CG did not converge within {maxiter} iterations "
            f"(relative residual {resid:.3e})")
    return SpatioTemporalField(x.reshape(nv, nt), grid)
