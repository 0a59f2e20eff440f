"""Built-in stroke-path glyphs (A-Z, 0-9) and their rasterization to binary masks.

Each glyph is a list of polylines in unit coordinates: x to the right, y downward,
both in [0, 1]. Curves are approximated by short polyline arcs.
"""

from __future__ import annotations

import numpy as np


def _arc(cx, cy, rx, ry, a0, a1, n=12):
    # angles in degrees, 0 = +x, 90 = +y (downward)
    a = np.radians(np.linspace(a0, a1, n))
    return [(cx + rx * np.cos(t), cy + ry * np.sin(t)) for t in a]


_L, _R, _T, _B, _M = 0.1, 0.9, 0.0, 1.0, 0.5

GLYPHS: dict[str, list[list[tuple[float, float]]]] = {
    "A": [[(_L, _B), (_M, _T), (_R, _B)], [(0.28, 0.62), (0.72, 0.62)]],
    "B": [
        [(0.15, _T), (0.15, _B)],
        [(0.15, _T)] + _arc(0.55, 0.24, 0.3, 0.24, -90, 90) + [(0.15, 0.48)],
        [(0.15, 0.48)] + _arc(0.57, 0.74, 0.33, 0.26, -90, 90) + [(0.15, _B)],
    ],
    "C": [_arc(0.55, 0.5, 0.42, 0.5, -40, -320, 16)],
    "D": [[(0.15, _T), (0.15, _B)], [(0.15, _T)] + _arc(0.45, 0.5, 0.42, 0.5, -90, 90, 16) + [(0.15, _B)]],
    "E": [[(_R, _T), (0.15, _T), (0.15, _B), (_R, _B)], [(0.15, _M), (0.75, _M)]],
    "F": [[(_R, _T), (0.15, _T), (0.15, _B)], [(0.15, _M), (0.75, _M)]],
    "G": [_arc(0.55, 0.5, 0.42, 0.5, -40, -360, 16) + [(0.97, 0.55), (0.6, 0.55)]],
    "H": [[(0.15, _T), (0.15, _B)], [(0.85, _T), (0.85, _B)], [(0.15, _M), (0.85, _M)]],
    "I": [[(_M, _T), (_M, _B)]],
    "J": [[(0.75, _T), (0.75, 0.7)] + _arc(0.45, 0.7, 0.3, 0.3, 0, 180)],
    "K": [[(0.15, _T), (0.15, _B)], [(0.85, _T), (0.15, 0.6)], [(0.38, 0.42), (0.85, _B)]],
    "L": [[(0.15, _T), (0.15, _B), (0.85, _B)]],
    "M": [[(_L, _B), (_L, _T), (_M, 0.65), (_R, _T), (_R, _B)]],
    "N": [[(0.15, _B), (0.15, _T), (0.85, _B), (0.85, _T)]],
    "O": [_arc(0.5, 0.5, 0.4, 0.5, 0, 360, 20)],
    "P": [[(0.15, _B), (0.15, _T)] + _arc(0.52, 0.27, 0.33, 0.27, -90, 90) + [(0.15, 0.54)]],
    "Q": [_arc(0.5, 0.5, 0.4, 0.5, 0, 360, 20), [(0.55, 0.7), (0.92, _B)]],
    "R": [[(0.15, _B), (0.15, _T)] + _arc(0.52, 0.27, 0.33, 0.27, -90, 90) + [(0.15, 0.54)], [(0.45, 0.54), (0.85, _B)]],
    "S": [_arc(0.5, 0.25, 0.35, 0.25, -20, -270, 10) + _arc(0.5, 0.75, 0.35, 0.25, -90, 160, 12)],
    "T": [[(_L, _T), (_R, _T)], [(_M, _T), (_M, _B)]],
    "U": [[(0.15, _T), (0.15, 0.65)] + _arc(0.5, 0.65, 0.35, 0.35, 180, 0) + [(0.85, _T)]],
    "V": [[(_L, _T), (_M, _B), (_R, _T)]],
    "W": [[(0.05, _T), (0.28, _B), (_M, 0.35), (0.72, _B), (0.95, _T)]],
    "X": [[(0.12, _T), (0.88, _B)], [(0.88, _T), (0.12, _B)]],
    "Y": [[(_L, _T), (_M, _M), (_R, _T)], [(_M, _M), (_M, _B)]],
    "Z": [[(0.12, _T), (0.88, _T), (0.12, _B), (0.88, _B)]],
    "0": [_arc(0.5, 0.5, 0.35, 0.5, 0, 360, 20), [(0.3, 0.8), (0.7, 0.2)]],
    "1": [[(0.3, 0.2), (0.55, _T), (0.55, _B)], [(0.3, _B), (0.8, _B)]],
    "2": [_arc(0.5, 0.3, 0.35, 0.3, 180, 360, 10) + _arc(0.5, 0.3, 0.35, 0.3, 0, 40, 4) + [(0.15, _B), (0.88, _B)]],
    "3": [_arc(0.5, 0.26, 0.33, 0.26, -160, 90, 12), _arc(0.5, 0.74, 0.36, 0.26, -90, 160, 12)],
    "4": [[(0.7, _B), (0.7, _T), (0.1, 0.7), (0.9, 0.7)]],
    "5": [[(0.82, _T), (0.22, _T), (0.18, 0.45)] + _arc(0.5, 0.68, 0.36, 0.32, -120, 160, 14)],
    "6": [_arc(0.5, 0.68, 0.35, 0.32, 0, 360, 16), _arc(0.78, 0.68, 0.63, 0.68, 180, 260, 8)],
    "7": [[(0.12, _T), (0.88, _T), (0.35, _B)]],
    "8": [_arc(0.5, 0.25, 0.3, 0.25, 0, 360, 16), _arc(0.5, 0.74, 0.36, 0.26, 0, 360, 16)],
    "9": [_arc(0.5, 0.32, 0.35, 0.32, 0, 360, 16), _arc(0.22, 0.32, 0.63, 0.68, 0, 80, 8)],
}

ALPHABET = tuple(sorted(GLYPHS))


def _segments(glyph_id: str) -> np.ndarray:
    segs = []
    for line in GLYPHS[glyph_id]:
        pts = np.asarray(line, dtype=np.float64)
        segs.append(np.stack([pts[:-1], pts[1:]], axis=1))
    return np.concatenate(segs, axis=0)  # (n, 2, 2) as [start|end, x|y]


def render_glyph_mask(
    glyph_id: str,
    H: int,
    W: int,
    stroke_width: float,
    rotation: float = 0.0,
    margin: float = 0.15,
) -> np.ndarray:
    """Rasterize a built-in glyph as a binary ``(H, W)`` mask.

    Strokes are polylines of width ``stroke_width`` pixels, fitted into the box
    inset by ``margin`` and rotated by ``rotation`` degrees about the image center.
    A pixel is set when its center lies within ``stroke_width / 2`` of a stroke.
    """
    if glyph_id not in GLYPHS:
        raise ValueError(f"unknown glyph_id {glyph_id!r}; expected one of {''.join(ALPHABET)}")
    if stroke_width <= 0:
        raise ValueError("stroke_width must be positive (an empty mask is not a glyph)")

    segs = _segments(glyph_id)
    box_w = (1 - 2 * margin) * W
    box_h = (1 - 2 * margin) * H
    px = margin * W + segs[..., 0] * box_w
    py = margin * H + segs[..., 1] * box_h

    theta = np.radians(rotation)
    cx, cy = W / 2.0, H / 2.0
    c, s = np.cos(theta), np.sin(theta)
    rx = cx + c * (px - cx) - s * (py - cy)
    ry = cy + s * (px - cx) + c * (py - cy)

    ax, ay = rx[:, 0], ry[:, 0]
    dx, dy = rx[:, 1] - ax, ry[:, 1] - ay
    seg_len2 = np.maximum(dx * dx + dy * dy, 1e-12)

    gy, gx = np.mgrid[0:H, 0:W]
    qx = (gx + 0.5)[..., None]
    qy = (gy + 0.5)[..., None]
    t = np.clip(((qx - ax) * dx + (qy - ay) * dy) / seg_len2, 0.0, 1.0)
    dist2 = (qx - ax - t * dx) ** 2 + (qy - ay - t * dy) ** 2
    half = stroke_width / 2.0
    return (dist2.min(axis=-1) <= half * half).astype(np.float64)
