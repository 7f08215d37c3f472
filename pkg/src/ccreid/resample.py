"""Separable resampling expressed as small dense matrices.

Resizing a grid ``G`` of shape ``(h, w)`` to ``(H, W)`` is ``Rh @ G @ Rw.T``
where ``Rh``/``Rw`` come from the builders below. Every row of every matrix
sums to one, so constant grids stay constant (up to rounding).
"""

from __future__ import annotations

import numpy as np


def area_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Area-average weights: output cell ``i`` covers ``[i*s, (i+1)*s)`` with ``s = n_in/n_out``."""
    if n_in <= 0 or n_out <= 0:
        raise ValueError(f"sizes must be positive, got {n_in} -> {n_out}")
    scale = n_in / n_out
    m = np.zeros((n_out, n_in))
    for i in range(n_out):
        lo, hi = i * scale, (i + 1) * scale
        for j in range(int(np.floor(lo)), min(int(np.ceil(hi)), n_in)):
            overlap = min(hi, j + 1) - max(lo, j)
            if overlap > 0:
                m[i, j] = overlap
        m[i] /= m[i].sum()
    return m


def bilinear_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Linear interpolation with half-pixel centres and edge clamping."""
    if n_in <= 0 or n_out <= 0:
        raise ValueError(f"sizes must be positive, got {n_in} -> {n_out}")
    m = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for i in range(n_out):
        src = min(max((i + 0.5) * scale - 0.5, 0.0), n_in - 1)
        j0 = int(np.floor(src))
        j1 = min(j0 + 1, n_in - 1)
        t = src - j0
        m[i, j0] += 1.0 - t
        m[i, j1] += t
    return m


def nearest_matrix(n_in: int, n_out: int) -> np.ndarray:
    if n_in <= 0 or n_out <= 0:
        raise ValueError(f"sizes must be positive, got {n_in} -> {n_out}")
    m = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for i in range(n_out):
        m[i, min(int((i + 0.5) * scale), n_in - 1)] = 1.0
    return m


_BUILDERS = {"area": area_matrix, "bilinear": bilinear_matrix, "nearest": nearest_matrix}


def resize(grid: np.ndarray, out_h: int, out_w: int, mode: str = "area") -> np.ndarray:
    """Resize the two leading axes of ``grid``; trailing axes (channels) ride along."""
    build = _BUILDERS[mode]
    g = np.asarray(grid, dtype=np.float64)
    rh = build(g.shape[0], out_h)
    rw = build(g.shape[1], out_w)
    return np.einsum("ih,hw...,jw->ij...", rh, g, rw)
