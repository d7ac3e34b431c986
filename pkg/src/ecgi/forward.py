"""Body-heart observation model: transfer matrix and noisy measurements.

The synthetic transfer matrix uses an inverse-square distance kernel from
quasi-uniform torso sensors to heart vertices; it is deliberately severely
ill-conditioned, matching the character of the inverse problem.  A CSV
loader covers externally supplied matrices.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .mesh import TriMesh
from .apsim import SpatioTemporalField

__all__ = [
    "TransferModel", "Observation", "synth_transfer", "load_transfer",
    "save_transfer", "observe",
]


@dataclass(frozen=True)
class TransferModel:
    """Linear body-heart map: y = R u, with R of shape M x V, M < V."""

    R: np.ndarray
    sensor_positions: Optional[np.ndarray] = None

    def __post_init__(self):
        R = np.ascontiguousarray(np.asarray(self.R, dtype=float))
        if R.ndim != 2:
            raise ValueError("R must be a 2-D matrix")
        if R.shape[0] >= R.shape[1]:
            raise ValueError(
                f"R must be underdetermined (M < V), got {R.shape}")
        if not np.isfinite(R).all():
            raise ValueError("R contains non-finite entries")
        if (np.abs(R).sum(axis=1) == 0).any():
            raise ValueError("R contains an all-zero row")
        R.setflags(write=False)
        object.__setattr__(self, "R", R)

    @property
    def n_sensors(self):
        return self.R.shape[0]

    @property
    def n_nodes(self):
        return self.R.shape[1]


@dataclass(frozen=True)
class Observation:
    """Sensor measurements y (M x count) with the noise spec that made them."""

    y: np.ndarray
    sigma: float
    seed: int

    def __post_init__(self):
        y = np.ascontiguousarray(np.asarray(self.y, dtype=float))
        if y.ndim != 2:
            raise ValueError("y must be 2-D")
        y.setflags(write=False)
        object.__setattr__(self, "y", y)


def _fibonacci_sphere(n):
    """Quasi-uniform unit-sphere points via the golden-angle spiral."""
    i = np.arange(n)
    phi = np.pi * (3.0 - np.sqrt(5.0)) * i
    z = 1.0 - 2.0 * (i + 0.5) / n
    r = np.sqrt(1.0 - z ** 2)
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


def _random_rotation(rng):
    # QR of a Gaussian matrix, sign-fixed, gives a uniform rotation
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def synth_transfer(heart: TriMesh, n_sensors: int,
                   torso_radius_factor: float = 2.0,
                   seed: int = 0) -> TransferModel:
    """Inverse-square kernel transfer matrix from synthetic torso sensors.

    Sensors sit on a Fibonacci sphere at torso_radius_factor times the
    heart bounding radius, randomly rotated by the seed; entries are
    c / dist^2 with c normalizing the largest row sum to 1.
    """
    if n_sensors >= heart.n_vertices:
        raise ValueError("need fewer sensors than heart nodes")
    if torso_radius_factor <= 1.0:
        raise ValueError("torso_radius_factor must exceed 1")
    lo = heart.vertices.min(axis=0)
    hi = heart.vertices.max(axis=0)
    center = 0.5 * (lo + hi)
    # radius of the sphere enclosing the axis-aligned bounding box
    bounding = 0.5 * float(np.linalg.norm(hi - lo))
    rng = np.random.default_rng(seed)
    pts = _fibonacci_sphere(n_sensors) @ _random_rotation(rng).T
    sensors = center + torso_radius_factor * bounding * pts
    diff = sensors[:, None, :] - heart.vertices[None, :, :]
    dist2 = (diff ** 2).sum(axis=2)
    if (dist2 < 1e-18).any():
        raise ValueError("sensor coincides with a heart vertex")
    R = 1.0 / dist2
    R /= R.sum(axis=1).max()
    return TransferModel(R, sensor_positions=sensors)


def save_transfer(tm: TransferModel, path) -> None:
    """Row-major CSV, no header, 17 significant digits (round-trip exact)."""
    with open(path, "w") as fh:
        for row in tm.R:
            fh.write(",".join(f"{x:.17g}" for x in row) + "\n")


def load_transfer(path) -> TransferModel:
    rows = []
    width = None
    with open(path) as fh:
        for no, ln in enumerate(fh, start=1):
            ln = ln.strip()
            if not ln:
                continue
            parts = ln.split(",")
            if width is None:
                width = len(parts)
            elif len(parts) != width:
                raise ValueError(
                    f"{path}:{no}: ragged row ({len(parts)} fields, "
                    f"expected {width})")
            try:
                rows.append([float(x) for x in parts])
            except ValueError:
                raise ValueError(
                    f"{path}:{no}: non-numeric field") from None
    if not rows:
        raise ValueError(f"{path}: empty transfer matrix")
    return TransferModel(np.array(rows))


def observe(tm: TransferModel, u: SpatioTemporalField, sigma: float,
            seed: int) -> Observation:
    """y = R u plus i.i.d. Gaussian noise N(0, sigma^2) per entry."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if tm.n_nodes != u.n_nodes:
        raise ValueError(
            f"R has {tm.n_nodes} columns, field has {u.n_nodes} nodes")
    y = tm.R @ u.data
    if sigma > 0:
        rng = np.random.default_rng(seed)
        y = y + sigma * rng.standard_normal(y.shape)
    return Observation(y, sigma, seed)
