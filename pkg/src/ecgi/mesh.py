"""Triangulated surface geometry: construction, adjacency, normals, OFF I/O."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "TriMesh", "Adjacency", "MeshError", "OffFormatError",
    "build_adjacency", "icosphere", "vertex_normals",
    "load_off", "save_off",
]


class MeshError(ValueError):
    """Invalid mesh geometry or topology."""


class OffFormatError(ValueError):
    """Malformed OFF file; `kind` is one of header / face-arity / face-index
    / vertex / counts."""

    def __init__(self, kind, message):
        super().__init__(message)
        self.kind = kind


@dataclass(frozen=True)
class TriMesh:
    """Immutable triangle mesh.

    vertices : (V, 3) float array
    faces : (F, 3) int array of vertex indices
    is_closed : True when every edge is shared by exactly two faces
    """

    vertices: np.ndarray
    faces: np.ndarray
    is_closed: bool = field(init=False)

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.vertices, dtype=float))
        f = np.ascontiguousarray(np.asarray(self.faces, dtype=int))
        if v.ndim != 2 or v.shape[1] != 3:
            raise MeshError(f"vertices must be (V, 3), got {v.shape}")
        if f.ndim != 2 or f.shape[1] != 3:
            raise MeshError(f"faces must be (F, 3), got {f.shape}")
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise MeshError("face index out of range")
        if f.size:
            if ((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2])
                    | (f[:, 0] == f[:, 2])).any():
                raise MeshError("degenerate face: repeated vertex")
            areas = 0.5 * np.linalg.norm(
                np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]]),
                axis=1)
            if (areas < 1e-14).any():
                raise MeshError("degenerate face: zero area")
        v.setflags(write=False)
        f.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        object.__setattr__(self, "is_closed", _is_closed(f))

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_faces(self):
        return len(self.faces)

    def edges(self):
        """Unique undirected edges as a (E, 2) sorted-index array."""
        f = self.faces
        e = np.vstack([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        e.sort(axis=1)
        return np.unique(e, axis=0)


def _is_closed(faces):
    if not len(faces):
        return False
    e = np.vstack([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    e.sort(axis=1)
    _, counts = np.unique(e, axis=0, return_counts=True)
    return bool((counts == 2).all())


@dataclass(frozen=True)
class Adjacency:
    """Per-vertex 1-ring structure: neighbor indices, edge lengths, and the
    mean ring radius r_i (arithmetic mean of the edge lengths at i)."""

    neighbors: tuple        # tuple of int arrays, one per vertex
    distances: tuple        # tuple of float arrays, matching neighbors
    ring_radius: np.ndarray  # (V,) mean edge length per vertex

    @property
    def n_vertices(self):
        return len(self.neighbors)

    def degree(self, i):
        return len(self.neighbors[i])


def build_adjacency(mesh: TriMesh) -> Adjacency:
    """1-ring adjacency from shared edges; rejects isolated vertices."""
    nv = mesh.n_vertices
    nbr_sets = [set() for _ in range(nv)]
    for a, b in mesh.edges():
        nbr_sets[a].add(b)
        nbr_sets[b].add(a)
    if any(len(s) == 0 for s in nbr_sets):
        bad = [i for i, s in enumerate(nbr_sets) if not s]
        raise MeshError(f"isolated vertices (no incident edges): {bad[:10]}")
    neighbors = []
    distances = []
    radii = np.empty(nv)
    v = mesh.vertices
    for i in range(nv):
        nb = np.array(sorted(nbr_sets[i]), dtype=int)
        d = np.linalg.norm(v[nb] - v[i], axis=1)
        if (d <= 0).any():
            raise MeshError(f"coincident vertices around vertex {i}")
        neighbors.append(nb)
        distances.append(d)
        radii[i] = d.mean()
    return Adjacency(tuple(neighbors), tuple(distances), radii)


# ------------------------------------------------------------------ icosphere

def _icosahedron():
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array([
        [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
        [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
        [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
    ], dtype=float)
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ], dtype=int)
    return verts, faces


def icosphere(subdivisions: int, radius: float = 1.0) -> TriMesh:
    """Closed icosahedron subdivided `subdivisions` times, projected to
    `radius`.  Vertex count is 10 * 4**s + 2."""
    if subdivisions < 0 or subdivisions > 6:
        raise ValueError("subdivisions must be in [0, 6]")
    if radius <= 0:
        raise ValueError("radius must be positive")
    verts, faces = _icosahedron()
    verts = list(verts)
    for _ in range(subdivisions):
        midpoint = {}

        def mid(a, b):
            key = (a, b) if a < b else (b, a)
            if key not in midpoint:
                m = verts[a] + verts[b]
                m /= np.linalg.norm(m)
                midpoint[key] = len(verts)
                verts.append(m)
            return midpoint[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new_faces += [[a, ab, ca], [b, bc, ab], [c, ca, bc],
                          [ab, bc, ca]]
        faces = np.array(new_faces, dtype=int)
    v = np.array(verts)
    v *= radius / np.linalg.norm(v, axis=1, keepdims=True)
    return TriMesh(v, faces)


def vertex_normals(mesh: TriMesh) -> np.ndarray:
    """Area-weighted per-vertex unit normals.

    Face cross products carry twice the face area, so accumulating them
    per incident vertex gives the area weighting directly.
    """
    v, f = mesh.vertices, mesh.faces
    fn = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
    acc = np.zeros_like(v)
    for k in range(3):
        np.add.at(acc, f[:, k], fn)
    norms = np.linalg.norm(acc, axis=1)
    if (norms < 1e-14).any():
        bad = np.nonzero(norms < 1e-14)[0]
        raise MeshError(f"zero accumulated normal at vertices {bad[:10]}")
    return acc / norms[:, None]


# -------------------------------------------------------------------- OFF I/O

def save_off(mesh: TriMesh, path) -> None:
    """ASCII OFF with vertex coordinates at 9 significant digits."""
    lines = ["OFF", f"{mesh.n_vertices} {mesh.n_faces} {len(mesh.edges())}"]
    for x, y, z in mesh.vertices:
        lines.append(f"{x:.9g} {y:.9g} {z:.9g}")
    for a, b, c in mesh.faces:
        lines.append(f"3 {a} {b} {c}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_off(path) -> TriMesh:
    with open(path) as fh:
        tokens_by_line = [
            (no, ln.split("#")[0].split())
            for no, ln in enumerate(fh, start=1)
        ]
    lines = [(no, t) for no, t in tokens_by_line if t]
    if not lines or lines[0][1] != ["OFF"]:
        raise OffFormatError("header", f"{path}: missing OFF header")
    if len(lines) < 2:
        raise OffFormatError("counts", f"{path}: missing counts line")
    try:
        nv, nf = int(lines[1][1][0]), int(lines[1][1][1])
    except (ValueError, IndexError):
        raise OffFormatError(
            "counts", f"{path}: bad counts line {lines[1][1]}") from None
    body = lines[2:]
    if len(body) < nv + nf:
        raise OffFormatError(
            "counts", f"{path}: expected {nv + nf} body lines, "
            f"got {len(body)}")
    verts = np.empty((nv, 3))
    for i in range(nv):
        no, t = body[i]
        try:
            verts[i] = [float(t[0]), float(t[1]), float(t[2])]
        except (ValueError, IndexError):
            raise OffFormatError(
                "vertex", f"{path}:{no}: bad vertex line") from None
    faces = np.empty((nf, 3), dtype=int)
    for i in range(nf):
        no, t = body[nv + i]
        if t[0] != "3":
            raise OffFormatError(
                "face-arity",
                f"{path}:{no}: non-triangular face (arity {t[0]})")
        try:
            faces[i] = [int(t[1]), int(t[2]), int(t[3])]
        except (ValueError, IndexError):
            raise OffFormatError(
                "face-arity", f"{path}:{no}: bad face line") from None
        if faces[i].min() < 0 or faces[i].max() >= nv:
            raise OffFormatError(
                "face-index",
                f"{path}:{no}: face index out of range [0, {nv})")
    return TriMesh(verts, faces)
