"""Forward Aliev-Panfilov simulation on a surface mesh.

Two-variable reaction-diffusion dynamics for the normalized potential u and
recovery variable v, integrated by explicit Euler with the mesh Laplacian
supplying the diffusion term.  On a closed surface there is no boundary
curve, so the zero-flux condition is vacuous.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import TriMesh, Adjacency
from .ops import LaplacianOperator, TemporalGrid

__all__ = [
    "APParams", "SpatioTemporalField", "StimulusSpec", "SimulationError",
    "reaction_terms", "simulate", "downsample", "save_field_csv",
    "load_field_csv",
]


class SimulationError(RuntimeError):
    """Stability violation or blow-up during integration."""


@dataclass(frozen=True)
class APParams:
    """Aliev-Panfilov constants (dimensionless)."""

    a: float = 0.1
    D: float = 10.0
    k: float = 8.0
    e0: float = 0.002
    mu1: float = 0.3
    mu2: float = 0.3

    def __post_init__(self):
        for name in ("a", "D", "k", "e0", "mu1", "mu2"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")


@dataclass(frozen=True)
class SpatioTemporalField:
    """V x count matrix of potentials on a uniform time grid."""

    data: np.ndarray
    grid: TemporalGrid

    def __post_init__(self):
        d = np.ascontiguousarray(np.asarray(self.data, dtype=float))
        if d.ndim != 2:
            raise ValueError(f"field data must be 2-D, got {d.shape}")
        if d.shape[1] != self.grid.count:
            raise ValueError(
                f"field has {d.shape[1]} columns, grid expects "
                f"{self.grid.count}")
        if not np.isfinite(d).all():
            raise ValueError("field contains non-finite entries")
        d.setflags(write=False)
        object.__setattr__(self, "data", d)

    @property
    def n_nodes(self):
        return self.data.shape[0]


@dataclass(frozen=True)
class StimulusSpec:
    """Additive point stimulus: amplitude applied at one vertex for the
    first `duration_steps` integration steps."""

    vertex: int
    amplitude: float = 1.0
    duration_steps: int = 1

    def __post_init__(self):
        if self.duration_steps < 1:
            raise ValueError("duration_steps must be >= 1")


def reaction_terms(u, v, p: APParams):
    """Pointwise reaction part of the dynamics; accepts arrays.

    Returns (du_reaction, dv) with
      du_reaction = k u (u - a)(1 - u) - u v
      dv = (e0 + mu1 v / (u + mu2)) (-v - k u (u - a - 1))
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if np.any(u <= -p.mu2):
        raise ValueError("u <= -mu2 would divide by zero in xi(u, v)")
    du = p.k * u * (u - p.a) * (1.0 - u) - u * v
    xi = p.e0 + p.mu1 * v / (u + p.mu2)
    dv = xi * (-v - p.k * u * (u - p.a - 1.0))
    return du, dv


def simulate(mesh: TriMesh, adj: Adjacency, lap: LaplacianOperator,
             params: APParams, stim: StimulusSpec, grid: TemporalGrid,
             dt: float = 0.005):
    """Explicit-Euler integration producing u and v sampled on `grid`.

    `grid` fixes the output sampling (count samples spaced tau); dt is the
    internal step and must divide tau to a whole number of substeps.
    Stability requires dt * D * max|diag| < 1 for the diffusion part.
    """
    nv = mesh.n_vertices
    if not 0 <= stim.vertex < nv:
        raise ValueError(f"stimulus vertex {stim.vertex} out of range")
    substeps = int(round(grid.tau / dt))
    if substeps < 1 or abs(substeps * dt - grid.tau) > 1e-9 * grid.tau:
        raise ValueError(f"dt={dt} does not divide tau={grid.tau}")
    diag_max = np.abs(lap.matrix.diagonal()).max()
    stability = dt * params.D * diag_max
    if stability >= 1.0:
        raise SimulationError(
            f"explicit Euler unstable: dt*D*max|diag| = {stability:.3g} "
            ">= 1; reduce dt or coarsen the mesh")
    L = lap.matrix
    u = np.zeros(nv)
    v = np.zeros(nv)
    out_u = np.zeros((nv, grid.count))
    out_v = np.zeros((nv, grid.count))
    out_u[:, 0] = u
    out_v[:, 0] = v
    step = 0
    for col in range(1, grid.count):
        for _ in range(substeps):
            du, dv = reaction_terms(u, v, params)
            u = u + dt * (params.D * (L @ u) + du)
            v = v + dt * dv
            if step < stim.duration_steps:
                u[stim.vertex] = min(u[stim.vertex] + stim.amplitude, 1.0)
            step += 1
        if not (np.isfinite(u).all() and np.isfinite(v).all()):
            raise SimulationError(
                f"non-finite field values at output column {col} "
                f"(internal step {step})")
        out_u[:, col] = u
        out_v[:, col] = v
    return (SpatioTemporalField(out_u, grid),
            SpatioTemporalField(out_v, grid))


def downsample(field: SpatioTemporalField, stride: int) -> SpatioTemporalField:
    """Keep every stride-th time column; tau scales by the stride."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if stride == 1:
        return field
    data = field.data[:, ::stride]
    if data.shape[1] < 5:
        raise ValueError(
            f"downsampling to {data.shape[1]} columns breaks the "
            "five-point temporal stencils")
    grid = TemporalGrid(field.grid.tau * stride, data.shape[1])
    return SpatioTemporalField(data, grid)


def save_field_csv(field: SpatioTemporalField, path) -> None:
    """CSV with header node,t0,t1,... and 9-significant-digit values."""
    count = field.grid.count
    header = "node," + ",".join(f"t{j}" for j in range(count))
    lines = [header]
    for i, row in enumerate(field.data):
        lines.append(f"{i}," + ",".join(f"{x:.9g}" for x in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_field_csv(path, tau: float) -> SpatioTemporalField:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if header[0] != "node":
            raise ValueError(f"{path}: expected 'node' header column")
        rows = []
        for ln in fh:
            parts = ln.strip().split(",")
            if len(parts) != len(header):
                raise ValueError(f"{path}: ragged row {parts[0]}")
            rows.append([float(x) for x in parts[1:]])
    data = np.array(rows)
    return SpatioTemporalField(data, TemporalGrid(tau, data.shape[1]))
