"""Multi-octave value noise and palette mapping."""

from __future__ import annotations

import numpy as np


def _fade(t):
    return t * t * t * (t * (t * 6 - 15) + 10)


def value_noise(h: int, w: int, cell: float, rng: np.random.Generator) -> np.ndarray:
    """Single octave of smoothly interpolated lattice noise with values in [0, 1]."""
    cell = max(float(cell), 1.0)
    gh = int(np.ceil(h / cell)) + 2
    gw = int(np.ceil(w / cell)) + 2
    grid = rng.random((gh, gw))
    ys = np.arange(h) / cell
    xs = np.arange(w) / cell
    yi = ys.astype(int)
    xi = xs.astype(int)
    fy = _fade(ys - yi)[:, None]
    fx = _fade(xs - xi)[None, :]
    v00 = grid[np.ix_(yi, xi)]
    v01 = grid[np.ix_(yi, xi + 1)]
    v10 = grid[np.ix_(yi + 1, xi)]
    v11 = grid[np.ix_(yi + 1, xi + 1)]
    top = v00 + fx * (v01 - v00)
    bottom = v10 + fx * (v11 - v10)
    return top + fy * (bottom - top)


def fractal_noise(h: int, w: int, octaves: int, base_cell: float, rng: np.random.Generator) -> np.ndarray:
    """Sum of ``octaves`` value-noise layers (cell halves, amplitude halves), min-max normalized.

    ``octaves == 0`` yields a constant 0.5 field.
    """
    if octaves <= 0:
        return np.full((h, w), 0.5)
    total = np.zeros((h, w))
    amp = 1.0
    cell = base_cell
    for _ in range(octaves):
        total += amp * value_noise(h, w, cell, rng)
        amp *= 0.5
        cell /= 2.0
    lo, hi = total.min(), total.max()
    if hi - lo < 1e-12:
        return np.full((h, w), 0.5)
    return (total - lo) / (hi - lo)


def apply_palette(field: np.ndarray, palette) -> np.ndarray:
    """Map a scalar field in [0, 1] through a piecewise-linear palette of evenly spaced RGB anchors."""
    anchors = np.asarray(palette, dtype=np.float64)
    stops = np.linspace(0.0, 1.0, len(anchors))
    out = np.empty(field.shape + (3,))
    for c in range(3):
        out[..., c] = np.interp(field, stops, anchors[:, c])
    return out
