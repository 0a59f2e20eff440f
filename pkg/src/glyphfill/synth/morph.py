"""Binary mask morphology, smoothing and luminance segmentation."""

from __future__ import annotations

import numpy as np
from scipy import ndimage
from skimage.morphology import disk

from glyphfill.canvas import as_image, as_mask, is_binary

LUMA = np.array([0.299, 0.587, 0.114])


def luminance(image: np.ndarray) -> np.ndarray:
    return np.asarray(image, dtype=np.float64) @ LUMA


def _disk(radius: int) -> np.ndarray:
    return disk(int(radius)).astype(bool)


def dilate(mask: np.ndarray, radius: int) -> np.ndarray:
    m = np.asarray(mask) > 0.5
    if radius <= 0:
        return m.astype(np.float64)
    return ndimage.binary_dilation(m, structure=_disk(radius)).astype(np.float64)


def erode(mask: np.ndarray, radius: int) -> np.ndarray:
    m = np.asarray(mask) > 0.5
    if radius <= 0:
        return m.astype(np.float64)
    return ndimage.binary_erosion(m, structure=_disk(radius), border_value=0).astype(np.float64)


def open_close(mask: np.ndarray, radius: int) -> np.ndarray:
    m = np.asarray(mask) > 0.5
    if radius <= 0:
        return m.astype(np.float64)
    se = _disk(radius)
    m = ndimage.binary_opening(m, structure=se)
    return close(m, radius)


def refine_mask(mask: np.ndarray, morph_radius: int, sigma: float) -> np.ndarray:
    """Clean a raw binary mask: open + close with a disc, Gaussian blur, re-threshold at 0.5."""
    m = as_mask(mask)
    if not is_binary(m):
        raise ValueError("refine_mask expects a binary mask")
    m = open_close(m, morph_radius)
    if sigma > 0:
        m = ndimage.gaussian_filter(m, sigma=sigma, mode="constant")
    return (m > 0.5).astype(np.float64)


def segment_foreground(image: np.ndarray, threshold: float = 0.1) -> np.ndarray:
    """Foreground of a glyph rendered on black: luminance above ``threshold``, closed with radius 1."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    img = as_image(image)
    fg = luminance(img) > threshold
    return close(fg, 1)


def close(mask: np.ndarray, radius: int) -> np.ndarray:
    m = np.asarray(mask) > 0.5
    if radius <= 0:
        return m.astype(np.float64)
    # pad so the erosion half of closing does not bite into the image border
    pad = radius + 1
    m = ndimage.binary_closing(np.pad(m, pad), structure=_disk(radius))
    return m[pad:-pad, pad:-pad].astype(np.float64)


def contour_pixels(mask: np.ndarray) -> np.ndarray:
    """Mask pixels with at least one 4-neighbour outside the mask."""
    m = np.asarray(mask) > 0.5
    inner = ndimage.binary_erosion(m, structure=ndimage.generate_binary_structure(2, 1), border_value=0)
    return m & ~inner


def iou(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a) > 0.5
    b = np.asarray(b) > 0.5
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union
