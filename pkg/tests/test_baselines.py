import numpy as np
import pytest
import scipy.sparse as sp

from ecgi.apsim import SpatioTemporalField
from ecgi.baselines import (SolverError, StreConfig, TikhonovConfig,
                            edge_incidence, stre, tikhonov)
from ecgi.forward import Observation, TransferModel, observe, synth_transfer
from ecgi.mesh import build_adjacency, icosphere
from ecgi.ops import TemporalGrid, laplacian_matrix


def problem(sigma=0.02, seed=0, n_times=12):
    mesh = icosphere(1, 10.0)
    adj = build_adjacency(mesh)
    lap = laplacian_matrix(adj)
    grid = TemporalGrid(0.1, n_times)
    tm = synth_transfer(mesh, 12, seed=seed)
    rng = np.random.default_rng(seed)
    u = SpatioTemporalField(
        rng.uniform(0.0, 1.0, size=(mesh.n_vertices, n_times)), grid)
    return tm, observe(tm, u, sigma, seed), lap, grid, u


def test_config_validation():
    with pytest.raises(ValueError):
        TikhonovConfig(0.0)
    with pytest.raises(ValueError):
        TikhonovConfig(1.0, order=3)
    with pytest.raises(ValueError):
        StreConfig(0.0, 0.1)
    StreConfig(0.1, 0.0)  # lam_t may be zero


def test_edge_incidence_structure():
    mesh = icosphere(1, 1.0)
    adj = build_adjacency(mesh)
    G = edge_incidence(adj)
    assert G.shape == (len(mesh.edges()), mesh.n_vertices)
    # each row: one +1 and one -1; constant vectors in the null space
    assert np.allclose(np.asarray(G.sum(axis=1)).ravel(), 0.0)
    assert np.allclose(np.abs(G).sum(axis=1), 2.0)
    assert np.allclose(G @ np.ones(mesh.n_vertices), 0.0)


@pytest.mark.parametrize("order", [0, 1, 2])
def test_tikhonov_normal_equations_residual(order):
    # the solution must satisfy the stationarity condition of the
    # quadratic objective: (R'R + lam^2 G'G) u = R' y
    tm, obs, lap, grid, _ = problem()
    cfg = TikhonovConfig(0.5, order)
    est = tikhonov(tm, obs, cfg, lap, grid)
    from ecgi.baselines import _gamma_for
    G = _gamma_for(cfg, lap)
    A = tm.R.T @ tm.R + cfg.lam ** 2 * np.asarray((G.T @ G).todense())
    rhs = tm.R.T @ obs.y
    resid = np.linalg.norm(A @ est.data - rhs) / np.linalg.norm(rhs)
    assert resid < 1e-10


def test_tikhonov_matches_lstsq_oracle():
    # order 0 equals ridge regression solved via the stacked lstsq trick
    tm, obs, lap, grid, _ = problem()
    lam = 0.3
    est = tikhonov(tm, obs, TikhonovConfig(lam, 0), lap, grid)
    V = tm.n_nodes
    A = np.vstack([tm.R, lam * np.eye(V)])
    B = np.vstack([obs.y, np.zeros((V, obs.y.shape[1]))])
    expect, *_ = np.linalg.lstsq(A, B, rcond=None)
    assert np.allclose(est.data, expect, atol=1e-8)


def test_tikhonov_large_lambda_shrinks():
    tm, obs, lap, grid, _ = problem()
    est = tikhonov(tm, obs, TikhonovConfig(1e6, 0), lap, grid)
    assert np.abs(est.data).max() < 1e-6


def test_stre_matches_dense_bruteforce_small():
    # M=3, V=5, T=4 instance solved densely with an explicit Kronecker
    # assembly of the normal operator
    rng = np.random.default_rng(3)
    M, V, T = 3, 5, 4
    R = np.abs(rng.normal(size=(M, V))) + 0.2
    tm = TransferModel(R, np.zeros((M, 3)))
    L = sp.csr_matrix(rng.normal(size=(V, V)) * 0.2)
    grid = TemporalGrid(0.1, T)
    y = rng.normal(size=(M, T))
    obs = Observation(y, 0.0, 0)

    class FakeLap:
        matrix = L
        shape = (V, V)

    cfg = StreConfig(0.4, 0.7)
    est = stre(tm, obs, cfg, FakeLap(), grid, tol=1e-12)

    D = np.diff(np.eye(T), axis=0)  # (T-1) x T first difference
    A = (np.kron(R.T @ R + cfg.lam_s ** 2 * (L.T @ L).toarray(), np.eye(T))
         + np.kron(np.eye(V), cfg.lam_t ** 2 * D.T @ D))
    rhs = (R.T @ y).ravel()
    expect = np.linalg.solve(A, rhs).reshape(V, T)
    assert np.allclose(est.data, expect, atol=1e-6)


def test_stre_gradient_norm_at_solution():
    tm, obs, lap, grid, _ = problem()
    cfg = StreConfig(0.5, 0.2)
    est = stre(tm, obs, cfg, lap, grid, tol=1e-12)
    U = est.data
    L = lap.matrix
    T = grid.count
    D = np.diff(np.eye(T), axis=0)
    grad = 2 * (tm.R.T @ (tm.R @ U - obs.y)
                + cfg.lam_s ** 2 * (L.T @ L) @ U
                + cfg.lam_t ** 2 * U @ (D.T @ D))
    rel = np.linalg.norm(grad) / max(np.linalg.norm(2 * tm.R.T @ obs.y),
                                     1e-30)
    assert rel < 1e-6


def test_stre_nonconvergence_reports_residual():
    tm, obs, lap, grid, _ = problem()
    with pytest.raises(SolverError, match="residual"):
        stre(tm, obs, StreConfig(0.5, 0.2), lap, grid, tol=1e-14,
             maxiter=2)


def test_solvers_reduce_error_vs_naive_pinv():
    # sanity: at moderate noise both regularized solvers beat the
    # unregularized pseudo-inverse
    tm, obs, lap, grid, u = problem(sigma=0.05, seed=4)
    naive = np.linalg.pinv(tm.R) @ obs.y

    def re(est):
        return (np.linalg.norm(est - u.data)
                / np.linalg.norm(u.data))

    tik = tikhonov(tm, obs, TikhonovConfig(0.3, 0), lap, grid)
    st = stre(tm, obs, StreConfig(0.5, 0.2), lap, grid)
    assert re(tik.data) < re(naive)
    assert re(st.data) < re(naive)
