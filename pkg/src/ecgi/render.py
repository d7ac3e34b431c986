"""Deterministic SVG heatmaps of per-vertex fields on a mesh.

Orthographic projection along +z with painter's-order face sorting.
Face colors come from a 256-step linear blue-to-red map over the
[min, max] of the rendered column.
"""
from __future__ import annotations

import numpy as np

from .mesh import TriMesh

__all__ = ["colormap_rgb", "render_svg"]


def colormap_rgb(level: int) -> tuple:
    """Blue (level 0) to red (level 255), linear in RGB."""
    if not 0 <= level <= 255:
        raise ValueError("level must be in [0, 255]")
    return (level, 0, 255 - level)


def _levels(values):
    lo, hi = values.min(), values.max()
    if hi - lo < 1e-300:
        return np.zeros(len(values), dtype=int)
    lv = np.floor(256.0 * (values - lo) / (hi - lo)).astype(int)
    return np.clip(lv, 0, 255)


def render_svg(mesh: TriMesh, values, size: int = 480) -> str:
    """SVG text for one per-vertex value column; deterministic bytes."""
    values = np.asarray(values, dtype=float)
    if values.shape != (mesh.n_vertices,):
        raise ValueError(
            f"need one value per vertex ({mesh.n_vertices}), "
            f"got {values.shape}")
    v = mesh.vertices
    lo = v[:, :2].min(axis=0)
    hi = v[:, :2].max(axis=0)
    span = max((hi - lo).max(), 1e-12)
    margin = 0.05 * size
    scl = (size - 2 * margin) / span

    def to_px(p):
        x = margin + (p[0] - lo[0]) * scl
        y = size - margin - (p[1] - lo[1]) * scl  # flip y for SVG
        return x, y

    face_vals = values[mesh.faces].mean(axis=1)
    levels = _levels(face_vals)
    depth = v[mesh.faces, 2].mean(axis=1)
    order = np.argsort(depth, kind="stable")  # far faces first

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" '
        f'height="{size}" viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
    ]
    for fi in order:
        pts = " ".join(
            "{:.2f},{:.2f}".format(*to_px(v[vi]))
            for vi in mesh.faces[fi])
        r, g, b = colormap_rgb(int(levels[fi]))
        parts.append(
            f'<polygon points="{pts}" fill="rgb({r},{g},{b})" '
            f'stroke="none"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
