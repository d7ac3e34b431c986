"""Loss assembly and the optimization loop for the inverse reconstruction.

The total loss is data-fit plus lambda times the physics residual loss.
Residual derivatives come from one of three backends:

* ``nd``         — mesh Laplacian and five-point temporal stencils applied
                   to network samples on the node x time lattice (boundary
                   time indices use the one-sided stencils);
* ``ad``         — directional-derivative tape operations at raw
                   collocation coordinates;
* ``nd-spatial`` — mesh Laplacian from the lattice, temporal derivative
                   from the tape.

The boundary-flux residual r_b is off by default for the ND backends (a
closed surface has no boundary curve and no off-surface samples) and on
for the AD backend, where it is the normal-projected gradient.
"""
from __future__ import annotations

import functools
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import autodiff as ad
from .apsim import APParams, SpatioTemporalField
from .forward import Observation, TransferModel
from .mesh import TriMesh, Adjacency, build_adjacency, vertex_normals
from .network import (BoundParams, InputScaling, NetworkConfig,
                      NetworkParams, init_network, network_forward)
from .ops import LaplacianOperator, TemporalGrid, laplacian_matrix, \
    stencil_matrix

__all__ = [
    "TrainConfig", "TrainHistory", "ResidualSet", "InverseProblem",
    "TrainingDivergence", "data_loss", "ep_residuals_nd", "ep_residuals_ad",
    "ep_loss", "train", "detect_bad_init", "draw_collocation",
    "lattice_inputs", "lattice_fields",
]

_BACKENDS = ("nd", "ad", "nd-spatial")


class TrainingDivergence(RuntimeError):
    """Non-finite loss; carries the iteration index."""

    def __init__(self, iteration, message):
        super().__init__(message)
        self.iteration = iteration


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 0.1
    n_collocation: int = 5000
    iterations: int = 20000
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    time_batch: int = 32
    backend: str = "nd"
    include_rb: Optional[bool] = None  # None: off for nd*, on for ad
    resample_collocation: bool = False
    log_every: int = 100

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.n_collocation < 1 or self.iterations < 1:
            raise ValueError("n_collocation and iterations must be >= 1")
        if self.backend not in _BACKENDS:
            raise ValueError(f"backend must be one of {_BACKENDS}")

    @property
    def rb_enabled(self):
        if self.include_rb is not None:
            return self.include_rb
        return self.backend == "ad"


@dataclass(frozen=True)
class InverseProblem:
    """Everything a reconstruction needs: geometry, operators, physics
    constants, the transfer model, and the observation."""

    mesh: TriMesh
    adj: Adjacency
    lap: LaplacianOperator
    grid: TemporalGrid
    ap: APParams
    tm: TransferModel
    obs: Observation

    @classmethod
    def build(cls, mesh, grid, ap, tm, obs):
        adj = build_adjacency(mesh)
        return cls(mesh, adj, laplacian_matrix(adj), grid, ap, tm, obs)

    @property
    def n_nodes(self):
        return self.mesh.n_vertices

    def scaling(self):
        return InputScaling.from_domain(self.mesh, self.grid)


@dataclass
class ResidualSet:
    """Physics residuals at collocation points, as 1 x K tape values."""

    r_u: ad.Var
    r_v: ad.Var
    r_b: Optional[ad.Var] = None

    def values(self):
        out = {"r_u": self.r_u.value[0], "r_v": self.r_v.value[0]}
        if self.r_b is not None:
            out["r_b"] = self.r_b.value[0]
        return out


@dataclass
class TrainHistory:
    """Loss trajectory: one record per logged iteration."""

    records: list = field(default_factory=list)  # (iter, total, data, ep, s)

    def log(self, iteration, total, data, ep, seconds):
        self.records.append((iteration, float(total), float(data),
                             float(ep), float(seconds)))

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("iter,total,data,ep,seconds\n")
            for it, tot, d, e, s in self.records:
                fh.write(f"{it},{tot:.9g},{d:.9g},{e:.9g},{s:.6g}\n")

    @classmethod
    def from_csv(cls, path):
        hist = cls()
        with open(path) as fh:
            next(fh)
            for ln in fh:
                it, tot, d, e, s = ln.strip().split(",")
                hist.log(int(it), float(tot), float(d), float(e), float(s))
        return hist


def detect_bad_init(history: TrainHistory) -> bool:
    """True when any logged total loss in the first 300 iterations
    exceeds 1.5."""
    if not history.records or history.records[-1][0] < 300:
        raise ValueError("history must cover at least 300 iterations")
    return any(tot > 1.5 for it, tot, *_ in history.records if it <= 300)


# ----------------------------------------------------------------- plumbing

def lattice_inputs(mesh: TriMesh, grid: TemporalGrid,
                   scaling: InputScaling, time_indices=None):
    """Normalized (4, V*T) input columns, node-major: column v*T + t."""
    times = grid.times()
    if time_indices is not None:
        times = times[np.asarray(time_indices, dtype=int)]
    nv = mesh.n_vertices
    nt = len(times)
    raw = np.empty((4, nv * nt))
    raw[:3] = np.repeat(mesh.vertices.T, nt, axis=1)
    raw[3] = np.tile(times, nv)
    return scaling.normalize(raw)


_LATTICE_CACHE: dict = {}


def _full_lattice(mesh: TriMesh, grid: TemporalGrid, scaling: InputScaling):
    """Memoized full-grid lattice_inputs; constant across iterations."""
    key = (id(mesh), grid, tuple(np.ravel(scaling.center).tolist()),
           tuple(np.ravel(scaling.half_extent).tolist()),
           float(scaling.t0), float(scaling.t1))
    hit = _LATTICE_CACHE.get(key)
    if hit is None:
        _LATTICE_CACHE.clear()  # keep at most one lattice alive
        hit = lattice_inputs(mesh, grid, scaling)
        _LATTICE_CACHE[key] = hit
    return hit


@functools.lru_cache(maxsize=64)
def _dt_rows(count: int, tau: float):
    """Memoized transpose of the derivative stencil, in row-major sparse
    form for right-multiplication against (V, T) lattices."""
    return stencil_matrix(count, tau).T.tocsr()


def lattice_fields(bound: BoundParams, x_var, n_nodes, n_times):
    """Forward over lattice columns, reshaped to (V, T) u and v fields."""
    out = network_forward(bound, x_var)
    u = ad.reshape(ad.take_rows(out, [0]), (n_nodes, n_times))
    v = ad.reshape(ad.take_rows(out, [1]), (n_nodes, n_times))
    return u, v


def draw_collocation(rng, n_nodes, n_times, n_collocation):
    """Uniform (node, time-index) pairs without replacement."""
    total = n_nodes * n_times
    if n_collocation > total:
        raise ValueError(
            f"n_collocation={n_collocation} exceeds lattice size {total}")
    flat = rng.choice(total, size=n_collocation, replace=False)
    return flat // n_times, flat % n_times


# ------------------------------------------------------------------- losses

def data_loss(bound: BoundParams, problem: InverseProblem, time_indices,
              u_lattice=None):
    """Mean squared sensor mismatch over the sampled time instances.

    When `u_lattice` (a (V, T) tape value over the full grid) is supplied,
    its columns are reused; otherwise the network is evaluated at the
    sampled times only.
    """
    time_indices = np.asarray(time_indices, dtype=int)
    if time_indices.min() < 0 or time_indices.max() >= problem.grid.count:
        raise ValueError("time index out of grid range")
    if u_lattice is not None:
        u_b = ad.gather_cols(u_lattice, time_indices)
    else:
        xn = lattice_inputs(problem.mesh, problem.grid,
                            bound.params.scaling, time_indices)
        x_var = bound.tape.constant(xn)
        u_b, _ = lattice_fields(bound, x_var, problem.n_nodes,
                                len(time_indices))
    y_hat = ad.matmul_const(problem.tm.R, u_b)
    y_obs = bound.tape.constant(problem.obs.y[:, time_indices])
    return ad.vmean(ad.square(ad.sub(y_hat, y_obs)))


def _residual_fields_from(u, v, du_dt, dv_dt, laplacian_u, ap: APParams):
    """Pointwise residual algebra shared by all backends."""
    react_u = ad.mul(ad.scale(u, ap.k),
                     ad.mul(ad.affc(u, 1.0, -ap.a), ad.affc(u, -1.0, 1.0)))
    r_u = ad.add(ad.sub(ad.sub(du_dt, ad.scale(laplacian_u, ap.D)), react_u),
                 ad.mul(u, v))
    xi = ad.affc(ad.div(v, ad.affc(u, 1.0, ap.mu2)), ap.mu1, ap.e0)
    inner = ad.scale(
        ad.add(v, ad.mul(ad.scale(u, ap.k), ad.affc(u, 1.0, -ap.a - 1.0))),
        -1.0)
    r_v = ad.sub(dv_dt, ad.mul(xi, inner))
    return r_u, r_v


def ep_residuals_nd(bound: BoundParams, problem: InverseProblem,
                    colloc_nodes, colloc_times, fields=None):
    """Physics residuals with numerical derivatives on the lattice.

    Every derivative is a constant matrix applied to the network's lattice
    samples, so the network is never evaluated off the node x time grid.
    `fields` optionally reuses a (u, v) lattice pair already on the tape.
    """
    nv, nt = problem.n_nodes, problem.grid.count
    if fields is None:
        xn = _full_lattice(problem.mesh, problem.grid, bound.params.scaling)
        u, v = lattice_fields(bound, bound.tape.constant(xn), nv, nt)
    else:
        u, v = fields
    d_t = _dt_rows(nt, problem.grid.tau)
    du_dt = ad.rmatmul_const(u, d_t)
    dv_dt = ad.rmatmul_const(v, d_t)
    lap_u = ad.matmul_const(problem.lap.matrix, u)
    r_u_f, r_v_f = _residual_fields_from(u, v, du_dt, dv_dt, lap_u,
                                         problem.ap)
    r_u = ad.take_entries(r_u_f, colloc_nodes, colloc_times)
    r_v = ad.take_entries(r_v_f, colloc_nodes, colloc_times)
    return ResidualSet(r_u, r_v, None)


def _colloc_raw_inputs(problem, colloc_nodes, colloc_times):
    raw = np.empty((4, len(colloc_nodes)))
    raw[:3] = problem.mesh.vertices[colloc_nodes].T
    raw[3] = problem.grid.times()[colloc_times]
    return raw


def ep_residuals_ad(bound: BoundParams, problem: InverseProblem,
                    colloc_nodes, colloc_times, include_rb=True,
                    temporal_only=False, fields=None):
    """Physics residuals with tape directional derivatives.

    The temporal derivative is one forward-mode pass along the time axis;
    the Laplacian sums second directional derivatives along x, y, z (each
    a doubly-nested pass), corrected for the input normalization.  With
    `temporal_only`, the Laplacian comes from the mesh operator on lattice
    fields instead (mixed backend).
    """
    scaling = bound.params.scaling
    jac = scaling.jacobian()
    xn = scaling.normalize(
        _colloc_raw_inputs(problem, colloc_nodes, colloc_times))
    x_var = bound.tape.constant(xn)

    def net(z):
        return network_forward(bound, z)

    out = net(x_var)
    u = ad.take_rows(out, [0])
    v = ad.take_rows(out, [1])

    axes = np.eye(4)
    d_out = ad.input_directional_derivative(net, x_var, axes[3])
    du_dt = ad.scale(ad.take_rows(d_out, [0]), jac[3])
    dv_dt = ad.scale(ad.take_rows(d_out, [1]), jac[3])

    if temporal_only:
        nv, nt = problem.n_nodes, problem.grid.count
        if fields is None:
            xl = lattice_inputs(problem.mesh, problem.grid, scaling)
            ul, _ = lattice_fields(bound, bound.tape.constant(xl), nv, nt)
        else:
            ul = fields[0]
        lap_full = ad.matmul_const(problem.lap.matrix, ul)
        lap_u = ad.take_entries(lap_full, colloc_nodes, colloc_times)
    else:
        lap_u = None
        for axis in range(3):
            d2 = ad.second_directional_derivative(net, x_var, axes[axis])
            term = ad.scale(ad.take_rows(d2, [0]), jac[axis] ** 2)
            lap_u = term if lap_u is None else ad.add(lap_u, term)

    r_u, r_v = _residual_fields_from(u, v, du_dt, dv_dt, lap_u, problem.ap)

    r_b = None
    if include_rb:
        normals = vertex_normals(problem.mesh)[colloc_nodes]
        for axis in range(3):
            d1 = ad.input_directional_derivative(net, x_var, axes[axis])
            comp = ad.cmul(ad.scale(ad.take_rows(d1, [0]), jac[axis]),
                           normals[:, axis][None, :])
            r_b = comp if r_b is None else ad.add(r_b, comp)
    return ResidualSet(r_u, r_v, r_b)


def ep_loss(residuals: ResidualSet):
    """(1/N_c) sum of squared residuals over the collocation points."""
    n = residuals.r_u.shape[1]
    if n == 0:
        raise ValueError("empty residual set")
    total = ad.add(ad.vsum(ad.square(residuals.r_u)),
                   ad.vsum(ad.square(residuals.r_v)))
    if residuals.r_b is not None:
        total = ad.add(total, ad.vsum(ad.square(residuals.r_b)))
    return ad.scale(total, 1.0 / n)


def assemble_losses(bound, problem, tcfg: TrainConfig, time_indices,
                    colloc_nodes, colloc_times):
    """(total, data, ep) scalar tape values for one iteration.

    With lam == 0 the physics term is skipped entirely and ep is None.
    """
    nv, nt = problem.n_nodes, problem.grid.count
    if tcfg.lam > 0 and tcfg.backend == "nd":
        xn = _full_lattice(problem.mesh, problem.grid, bound.params.scaling)
        fields = lattice_fields(bound, bound.tape.constant(xn), nv, nt)
        l_data = data_loss(bound, problem, time_indices,
                           u_lattice=fields[0])
        res = ep_residuals_nd(bound, problem, colloc_nodes, colloc_times,
                              fields=fields)
        if tcfg.rb_enabled:
            raise ValueError(
                "include_rb is not representable with on-surface ND "
                "samples; use the ad backend")
        l_ep = ep_loss(res)
    elif tcfg.lam > 0 and tcfg.backend == "nd-spatial":
        xn = _full_lattice(problem.mesh, problem.grid, bound.params.scaling)
        fields = lattice_fields(bound, bound.tape.constant(xn), nv, nt)
        l_data = data_loss(bound, problem, time_indices,
                           u_lattice=fields[0])
        res = ep_residuals_ad(bound, problem, colloc_nodes, colloc_times,
                              include_rb=tcfg.rb_enabled,
                              temporal_only=True, fields=fields)
        l_ep = ep_loss(res)
    elif tcfg.lam > 0:  # ad
        l_data = data_loss(bound, problem, time_indices)
        res = ep_residuals_ad(bound, problem, colloc_nodes, colloc_times,
                              include_rb=tcfg.rb_enabled)
        l_ep = ep_loss(res)
    else:
        l_data = data_loss(bound, problem, time_indices)
        l_ep = None
    if l_ep is None:
        return l_data, l_data, None
    total = ad.add(l_data, ad.scale(l_ep, tcfg.lam))
    return total, l_data, l_ep


# ------------------------------------------------------------------ training

def train(tcfg: TrainConfig, problem: InverseProblem,
          net_cfg: NetworkConfig):
    """Adam on the total loss; returns trained parameters and the history.

    Collocation points are drawn once from the seeded RNG (or per
    iteration with resample_collocation); the weight init seed is tied to
    the training seed so a run is fully determined by its config.
    """
    rng = np.random.default_rng(tcfg.seed)
    scaling = problem.scaling()
    params = init_network(replace(net_cfg, seed=tcfg.seed), scaling)
    nt = problem.grid.count
    colloc = draw_collocation(rng, problem.n_nodes, nt, tcfg.n_collocation)

    theta = params.flat()
    m = np.zeros_like(theta)
    w = np.zeros_like(theta)
    history = TrainHistory()
    t_start = time.perf_counter()
    batch_size = min(tcfg.time_batch, nt)

    for it in range(tcfg.iterations):
        batch = rng.choice(nt, size=batch_size, replace=False)
        if tcfg.resample_collocation and it > 0:
            colloc = draw_collocation(rng, problem.n_nodes, nt,
                                      tcfg.n_collocation)
        tape = ad.Tape()
        bound = BoundParams(tape, params)
        total, l_data, l_ep = assemble_losses(bound, problem, tcfg, batch,
                                              colloc[0], colloc[1])
        tot_val = float(total.value)
        if not np.isfinite(tot_val):
            raise TrainingDivergence(
                it, f"non-finite loss {tot_val} at iteration {it}")
        if it % tcfg.log_every == 0 or it == tcfg.iterations - 1:
            history.log(it, tot_val, float(l_data.value),
                        0.0 if l_ep is None else float(l_ep.value),
                        time.perf_counter() - t_start)
        grads = ad.backward(total)
        g = bound.flat_grad(grads)
        m = tcfg.beta1 * m + (1.0 - tcfg.beta1) * g
        w = tcfg.beta2 * w + (1.0 - tcfg.beta2) * g * g
        mhat = m / (1.0 - tcfg.beta1 ** (it + 1))
        what = w / (1.0 - tcfg.beta2 ** (it + 1))
        theta = theta - tcfg.learning_rate * mhat / (np.sqrt(what)
                                                     + tcfg.eps)
        params.set_flat(theta)
    return params, history


def predict_field(params: NetworkParams,
                  problem: InverseProblem) -> SpatioTemporalField:
    """Evaluate the trained u-channel on the full lattice."""
    tape = ad.Tape()
    bound = BoundParams(tape, params)
    xn = lattice_inputs(problem.mesh, problem.grid, params.scaling)
    u, _ = lattice_fields(bound, tape.constant(xn), problem.n_nodes,
                          problem.grid.count)
    return SpatioTemporalField(u.value.copy(), problem.grid)
