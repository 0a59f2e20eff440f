"""Desk-scale evaluation: patch-level Frechet style distance at glyph edges, mask adherence, cleanliness."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from glyphfill.synth.morph import contour_pixels, dilate, luminance

FEATURE_DIM = 17
SHRINKAGE = 1e-6
N_BINS = 8


def orientation_histogram(patch: np.ndarray, bins: int = N_BINS) -> np.ndarray:
    """Magnitude-weighted histogram of gradient orientation folded into ``[0, pi)``.

    Gradients are central differences of luminance on interior pixels. The
    histogram is normalized to sum 1, or left all-zero for a flat patch.
    """
    lum = luminance(patch)
    gy = 0.5 * (lum[2:, 1:-1] - lum[:-2, 1:-1])
    gx = 0.5 * (lum[1:-1, 2:] - lum[1:-1, :-2])
    mag = np.hypot(gx, gy).ravel()
    theta = np.mod(np.arctan2(gy, gx), np.pi).ravel()
    idx = np.minimum((theta / np.pi * bins).astype(int), bins - 1)
    hist = np.bincount(idx, weights=mag, minlength=bins)
    total = hist.sum()
    return hist / total if total > 0 else hist


def patch_features(patch: np.ndarray) -> np.ndarray:
    """17 numbers: mean RGB, the 6 upper-triangular RGB covariance entries, 8 orientation bins."""
    patch = np.asarray(patch, dtype=np.float64)
    px = patch.reshape(-1, 3)
    mu = px.mean(axis=0)
    d = px - mu
    cov = d.T @ d / px.shape[0]
    iu = np.triu_indices(3)
    return np.concatenate([mu, cov[iu], orientation_histogram(patch)])


def sample_edge_patches(image: np.ndarray, mask: np.ndarray, n: int, size: int = 8, seed: int = 0) -> list[np.ndarray]:
    """``n`` square patches centred (as nearly as clamping allows) on random contour pixels of ``mask``."""
    image = np.asarray(image, dtype=np.float64)
    H, W = image.shape[:2]
    if size > min(H, W) // 2 or size < 1:
        raise ValueError(f"patch size {size} must lie in [1, {min(H, W) // 2}]")
    pts = np.argwhere(contour_pixels(np.asarray(mask) > 0.5))
    if len(pts) == 0:
        raise ValueError("mask has no contour pixels")
    rng = np.random.default_rng(seed)
    centres = pts[rng.integers(len(pts), size=n)]
    half = size // 2
    out = []
    for cy, cx in centres:
        y0 = int(np.clip(cy - half, 0, H - size))
        x0 = int(np.clip(cx - half, 0, W - size))
        out.append(image[y0 : y0 + size, x0 : x0 + size].copy())
    return out


def edge_patch_centres(mask: np.ndarray, n: int, seed: int = 0) -> np.ndarray:
    """The contour pixels :func:`sample_edge_patches` draws for the same ``n`` and ``seed``."""
    pts = np.argwhere(contour_pixels(np.asarray(mask) > 0.5))
    if len(pts) == 0:
        raise ValueError("mask has no contour pixels")
    rng = np.random.default_rng(seed)
    return pts[rng.integers(len(pts), size=n)]


@dataclass
class FDScore:
    value: float
    n_a: int
    n_b: int
    shrunk: bool = False


def _moments(feats) -> tuple[np.ndarray, np.ndarray, int]:
    X = np.asarray(feats, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] < 1 or X.shape[0] < 2:
        raise ValueError("need at least two feature vectors")
    if not np.all(np.isfinite(X)):
        raise ValueError("features must be finite")
    return X.mean(axis=0), np.cov(X, rowvar=False), X.shape[0]


def _frechet_parts(A, B):
    mu1, s1, na = _moments(A)
    mu2, s2, nb = _moments(B)
    d = mu1.size
    shrunk = min(na, nb) < d + 1
    if shrunk:
        s1 = s1 + SHRINKAGE * np.eye(d)
        s2 = s2 + SHRINKAGE * np.eye(d)
    return mu1, s1, mu2, s2, na, nb, shrunk


def patch_frechet(A, B) -> FDScore:
    """``||mu1 - mu2||^2 + Tr(S1 + S2 - 2 (S1 S2)^(1/2))`` between Gaussians fitted to two feature sets."""
    mu1, s1, mu2, s2, na, nb, shrunk = _frechet_parts(A, B)
    root = scipy.linalg.sqrtm(s1 @ s2)
    if np.iscomplexobj(root):
        if np.max(np.abs(root.imag)) > 1e-6 * max(1.0, np.max(np.abs(root.real))):
            raise ValueError("covariance product has no real square root (not PSD)")
        root = root.real
    value = float(np.sum((mu1 - mu2) ** 2) + np.trace(s1) + np.trace(s2) - 2.0 * np.trace(root))
    if value < -1e-10:
        raise ValueError(f"negative Frechet distance {value}")
    return FDScore(max(value, 0.0), na, nb, shrunk)


def frechet_trace_root_eig(s1: np.ndarray, s2: np.ndarray) -> float:
    """``Tr((S1 S2)^(1/2))`` via symmetric eigendecompositions: ``S1^(1/2) S2 S1^(1/2)`` is PSD and
    similar to ``S1 S2``, so the trace is the sum of square roots of its eigenvalues."""
    w, V = np.linalg.eigh(s1)
    r1 = (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T
    m = r1 @ s2 @ r1
    ev = np.linalg.eigvalsh(0.5 * (m + m.T))
    return float(np.sum(np.sqrt(np.clip(ev, 0.0, None))))


def patch_frechet_eig(A, B) -> FDScore:
    mu1, s1, mu2, s2, na, nb, shrunk = _frechet_parts(A, B)
    value = float(np.sum((mu1 - mu2) ** 2) + np.trace(s1) + np.trace(s2) - 2.0 * frechet_trace_root_eig(s1, s2))
    return FDScore(max(value, 0.0), na, nb, shrunk)


def mask_iou(generated: np.ndarray, mask: np.ndarray, threshold: float = 0.1) -> float:
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    fg = luminance(np.asarray(generated, dtype=np.float64)) > threshold
    m = np.asarray(mask) > 0.5
    union = np.logical_or(fg, m).sum()
    return float(np.logical_and(fg, m).sum() / union) if union else 1.0


def background_cleanliness(image: np.ndarray, mask: np.ndarray, dilation: int = 2) -> float:
    """Mean luminance outside the dilated glyph mask; 0 for a perfectly black background."""
    outside = dilate(np.asarray(mask, dtype=np.float64), dilation) < 0.5
    if not outside.any():
        raise ValueError("dilated mask covers the whole image")
    return float(luminance(np.asarray(image, dtype=np.float64))[outside].mean())


def style_features(image, mask, n: int = 64, size: int = 8, seed: int = 0) -> np.ndarray:
    return np.stack([patch_features(p) for p in sample_edge_patches(image, mask, n, size, seed)])


def evaluate_pair(gen, gt, mask, cross_gt=None, cross_mask=None, n: int = 64, size: int = 8, seed: int = 0) -> dict:
    feats = style_features(gen, mask, n, size, seed)
    row = {
        "patch_fd_same": patch_frechet(feats, style_features(gt, mask, n, size, seed + 1)).value,
        "mask_iou": mask_iou(gen, mask),
        "cleanliness": background_cleanliness(gen, mask),
    }
    if cross_gt is not None:
        cm = mask if cross_mask is None else cross_mask
        row["patch_fd_cross"] = patch_frechet(feats, style_features(cross_gt, cm, n, size, seed + 1)).value
    return row


def aggregate(rows: dict) -> dict:
    keys = sorted({k for r in rows.values() for k in r})
    return {k: float(np.mean([r[k] for r in rows.values() if k in r])) for k in keys}
