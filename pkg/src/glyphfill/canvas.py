"""In-context canvas layout: reference region | separation band | glyph region.

Images are float numpy arrays in [0, 1]: RGB images are ``(H, W, 3)``, masks
are ``(H, W)``. Regions are laid out left to right along the width axis.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from glyphfill.errors import ShapeError


class Region(enum.IntEnum):
    REF = 0
    BAND = 1
    GLYPH = 2


def as_image(arr, name: str = "image") -> np.ndarray:
    """Validate an RGB image and clamp it into [0, 1] as float64."""
    img = np.asarray(arr, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ShapeError(f"{name}: expected (H, W, 3), got {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValueError(f"{name}: non-finite values")
    return np.clip(img, 0.0, 1.0)


def as_mask(arr, name: str = "mask") -> np.ndarray:
    mask = np.asarray(arr, dtype=np.float64)
    if mask.ndim != 2:
        raise ShapeError(f"{name}: expected (H, W), got {mask.shape}")
    if not np.all(np.isfinite(mask)):
        raise ValueError(f"{name}: non-finite values")
    return np.clip(mask, 0.0, 1.0)


def is_binary(mask: np.ndarray) -> bool:
    return bool(np.all((mask == 0.0) | (mask == 1.0)))


@dataclass(frozen=True)
class LayoutSpec:
    H: int
    W: int
    patch: int
    w_ref: int
    w_band: int
    w_total: int

    @property
    def glyph_start(self) -> int:
        return self.w_ref + self.w_band

    @property
    def token_grid(self) -> tuple[int, int]:
        return self.H // self.patch, self.w_total // self.patch

    @property
    def n_tokens(self) -> int:
        rows, cols = self.token_grid
        return rows * cols


def derive_layout(H: int, W: int, patch: int) -> LayoutSpec:
    """Compute the canvas layout for an ``H x W`` glyph at token patch size ``patch``.

    The reference region is ``W/2`` wide. The separation band is ``W/32`` wide,
    rounded up to a multiple of ``patch`` so that no token straddles two regions.
    """
    if patch < 1:
        raise ShapeError(f"patch must be >= 1, got {patch}")
    if H % patch:
        raise ShapeError(f"H={H} is not divisible by patch={patch}")
    if W % patch:
        raise ShapeError(f"W={W} is not divisible by patch={patch}")
    if W % 2:
        raise ShapeError(f"W={W} must be even")
    w_ref = W // 2
    if w_ref % patch:
        raise ShapeError(f"W/2={w_ref} is not divisible by patch={patch}")
    # smallest multiple of patch >= W/32, in exact integer arithmetic
    w_band = -(-W // (32 * patch)) * patch
    return LayoutSpec(H=H, W=W, patch=patch, w_ref=w_ref, w_band=w_band, w_total=w_ref + w_band + W)


def region_label_columns(layout: LayoutSpec) -> np.ndarray:
    cols = np.full(layout.w_total, Region.GLYPH, dtype=np.int8)
    cols[: layout.w_ref] = Region.REF
    cols[layout.w_ref : layout.glyph_start] = Region.BAND
    return cols


@dataclass
class CompositeCanvas:
    image: np.ndarray
    inpaint_mask: np.ndarray
    region_labels: np.ndarray
    layout: LayoutSpec


def compose_input(element_ref, glyph_mask, layout: LayoutSpec) -> CompositeCanvas:
    """Place the reference next to a blank glyph canvas; the glyph region becomes the inpaint area."""
    ref = as_image(element_ref, "element_ref")
    mask = as_mask(glyph_mask, "glyph_mask")
    if ref.shape != (layout.H, layout.w_ref, 3):
        raise ShapeError(f"element_ref: expected {(layout.H, layout.w_ref, 3)}, got {ref.shape}")
    if mask.shape != (layout.H, layout.W):
        raise ShapeError(f"glyph_mask: expected {(layout.H, layout.W)}, got {mask.shape}")
    if not is_binary(mask):
        raise ValueError("glyph_mask must be binary")

    image = np.zeros((layout.H, layout.w_total, 3))
    image[:, : layout.w_ref] = ref
    inpaint = np.zeros((layout.H, layout.w_total))
    inpaint[:, layout.glyph_start :] = mask
    labels = np.broadcast_to(region_label_columns(layout), (layout.H, layout.w_total)).copy()
    return CompositeCanvas(image=image, inpaint_mask=inpaint, region_labels=labels, layout=layout)


def _check_canvas_width(arr: np.ndarray, layout: LayoutSpec) -> None:
    if arr.shape[:2] != (layout.H, layout.w_total):
        raise ShapeError(f"canvas: expected {(layout.H, layout.w_total)}, got {arr.shape[:2]}")


def extract_glyph_region(canvas_image, layout: LayoutSpec) -> np.ndarray:
    img = np.asarray(canvas_image)
    _check_canvas_width(img, layout)
    return img[:, layout.glyph_start :].copy()


def extract_reference_region(canvas_image, layout: LayoutSpec) -> np.ndarray:
    img = np.asarray(canvas_image)
    _check_canvas_width(img, layout)
    return img[:, : layout.w_ref].copy()


def paste_glyph_region(canvas_image, glyph, layout: LayoutSpec) -> np.ndarray:
    img = np.array(canvas_image, copy=True)
    _check_canvas_width(img, layout)
    glyph = np.asarray(glyph)
    if glyph.shape[:2] != (layout.H, layout.W):
        raise ShapeError(f"glyph: expected {(layout.H, layout.W)}, got {glyph.shape[:2]}")
    img[:, layout.glyph_start :] = glyph
    return img


def token_region_labels(layout: LayoutSpec) -> np.ndarray:
    """Region label per token, shape ``(H/patch, w_total/patch)``."""
    rows, _ = layout.token_grid
    cols = region_label_columns(layout)[:: layout.patch]
    return np.broadcast_to(cols, (rows, cols.size)).copy()
