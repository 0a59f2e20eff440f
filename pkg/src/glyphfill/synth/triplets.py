"""Training triplets (input canvas, glyph mask, ground truth) built from procedural elements."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from glyphfill.canvas import LayoutSpec, as_image, as_mask
from glyphfill.synth.elements import (
    ElementKind,
    ElementSpec,
    ObjectInstance,
    synth_ground_truth_full,
)
from glyphfill.synth.glyphs import ALPHABET, render_glyph_mask
from glyphfill.synth.morph import dilate, erode, segment_foreground

# k glyphs -> (rows, cols) of the slot grid inside the glyph region
SLOT_GRIDS = {1: (1, 1), 2: (1, 2), 3: (2, 2), 4: (2, 2)}


@dataclass
class ReferenceRegion:
    image: np.ndarray  # (H, w_ref, 3)
    coverage: np.ndarray  # (H, w_ref) foreground coverage, 1 where element content is present
    provenance: dict = field(default_factory=dict)


def _crop(src: np.ndarray, cy: int, cx: int, h: int, w: int) -> tuple[np.ndarray, int, int]:
    H, W = src.shape[:2]
    top = int(np.clip(cy - h // 2, 0, H - h))
    left = int(np.clip(cx - w // 2, 0, W - w))
    return src[top : top + h, left : left + w].copy(), top, left


def _instances_from_image(gt_glyph: np.ndarray) -> list[ObjectInstance]:
    fg = segment_foreground(gt_glyph) > 0.5
    labels, n = ndimage.label(fg)
    out = []
    for sl in ndimage.find_objects(labels):
        h, w = sl[0].stop - sl[0].start, sl[1].stop - sl[1].start
        s = max(h, w)
        alpha = np.zeros((s, s))
        sprite = np.zeros((s, s, 3))
        alpha[:h, :w] = fg[sl]
        sprite[:h, :w] = gt_glyph[sl] * fg[sl][..., None]
        out.append(ObjectInstance(sprite=sprite, alpha=alpha))
    return out


def _fit(inst: ObjectInstance, h: int, w: int) -> ObjectInstance:
    """Nearest-neighbour downscale so the sprite fits an ``h x w`` slot; never upscales."""
    s = inst.size
    if s <= min(h, w):
        return inst
    n = min(h, w)
    idx = np.minimum((np.arange(n) * s / n).astype(int), s - 1)
    return ObjectInstance(sprite=inst.sprite[np.ix_(idx, idx)], alpha=inst.alpha[np.ix_(idx, idx)])


def _object_slots(m: int, H: int, w: int) -> list[tuple[int, int, int, int]]:
    if m == 4:
        return [(r * H // 2, c * w // 2, H // 2, w // 2) for r in range(2) for c in range(2)]
    edges = [i * H // m for i in range(m + 1)]
    return [(edges[i], 0, edges[i + 1] - edges[i], w) for i in range(m)]


def build_reference_region(
    gt_glyph: np.ndarray,
    glyph_mask: np.ndarray,
    kind: ElementKind | str,
    layout: LayoutSpec,
    rng_seed: int,
    texture: np.ndarray | None = None,
    instances: list[ObjectInstance] | None = None,
) -> ReferenceRegion:
    """Assemble the ``H x w_ref`` reference strip from a stylized glyph.

    Amorphous: two ``H/2 x w_ref`` crops centred on random glyph pixels, stacked
    vertically. Crops come from ``texture`` when given (the unmasked texture the
    glyph was cut from), otherwise literally from ``gt_glyph``.
    Object: 2-4 instances centred in non-overlapping slots of a black strip;
    instances come from ``instances`` or are segmented out of ``gt_glyph``.
    """
    kind = ElementKind(kind)
    gt = as_image(gt_glyph, "gt_glyph")
    mask = as_mask(glyph_mask, "glyph_mask") > 0.5
    H, w_ref = layout.H, layout.w_ref
    if gt.shape[:2] != (layout.H, layout.W) or mask.shape != (layout.H, layout.W):
        raise ValueError("gt_glyph and glyph_mask must be H x W")
    if not gt.any():
        raise ValueError("gt_glyph is all black")
    rng = np.random.default_rng([rng_seed, 104729])
    prov: dict = {"kind": kind.value, "fallback": False}

    if kind is ElementKind.AMORPHOUS:
        src = as_image(texture, "texture") if texture is not None else gt
        ph = H // 2
        pts = np.argwhere(mask)
        crops = []
        centres = []
        for _ in range(2):
            if len(pts) == 0:
                cy, cx = H // 2, layout.W // 2
                prov["fallback"] = True
            else:
                cy, cx = (int(v) for v in pts[rng.integers(len(pts))])
            patch, top, left = _crop(src, cy, cx, ph, w_ref)
            crops.append(patch)
            centres.append([cy, cx, top, left])
        image = np.concatenate(crops, axis=0)
        if image.shape[0] < H:  # odd H
            image = np.concatenate([image, np.zeros((H - image.shape[0], w_ref, 3))], axis=0)
        if texture is not None:
            coverage = np.ones((H, w_ref))
        else:
            coverage = np.concatenate(
                [_crop(mask.astype(float), c[0], c[1], ph, w_ref)[0] for c in centres], axis=0
            )
        prov.update(source="texture" if texture is not None else "glyph", crops=centres)
        return ReferenceRegion(image=image, coverage=coverage, provenance=prov)

    pool = instances if instances else _instances_from_image(gt)
    if not pool:
        raise ValueError("no object instances available for the reference region")
    m = int(rng.integers(2, 5))
    chosen = [pool[int(i)] for i in rng.integers(len(pool), size=m)]
    image = np.zeros((H, w_ref, 3))
    coverage = np.zeros((H, w_ref))
    slots = []
    for inst, (y, x, sh, sw) in zip(chosen, _object_slots(m, H, w_ref)):
        inst = _fit(inst, sh, sw)
        s = inst.size
        top, left = y + (sh - s) // 2, x + (sw - s) // 2
        a = inst.alpha > 0.5
        image[top : top + s, left : left + s][a] = inst.sprite[a]
        coverage[top : top + s, left : left + s][a] = 1.0
        slots.append([top, left, s])
    prov.update(n_instances=m, slots=slots)
    return ReferenceRegion(image=image, coverage=coverage, provenance=prov)


@dataclass
class TrainingTriplet:
    input: np.ndarray  # (H, w_total, 3)
    glyph_mask: np.ndarray  # (H, w_total)
    gt: np.ndarray  # (H, w_total, 3)
    element_kind: ElementKind
    provenance: dict
    ref_coverage: np.ndarray  # (H, w_ref)
    glyph_gt: np.ndarray  # (H, W, 3), the stylized glyph region before canvas insertion
    layout: LayoutSpec

    def check_invariants(self) -> None:
        lay = self.layout
        g0 = lay.glyph_start
        assert np.array_equal(self.gt[:, : lay.w_ref], self.input[:, : lay.w_ref]), "REF columns differ"
        assert not self.input[:, lay.w_ref :].any(), "input band/glyph region not blank"
        assert not self.glyph_mask[:, :g0].any(), "glyph_mask nonzero on REF/BAND"
        assert not self.gt[:, lay.w_ref : g0].any(), "gt band not black"
        assert self.glyph_mask[:, g0:].any(), "empty glyph mask"


def composite_glyph_mask(
    layout: LayoutSpec, rng: np.random.Generator, stroke_frac: float = 0.14
) -> tuple[np.ndarray, list[dict]]:
    """Union of k in {1..4} randomly rotated glyphs placed on a k-slot grid inside ``H x W``."""
    H, W = layout.H, layout.W
    k = int(rng.integers(1, 5))
    rows, cols = SLOT_GRIDS[k]
    slots = [(r, c) for r in range(rows) for c in range(cols)]
    order = rng.permutation(len(slots))[:k]
    mask = np.zeros((H, W))
    parts = []
    sh, sw = H // rows, W // cols
    for j in sorted(order):
        r, c = slots[j]
        gid = ALPHABET[int(rng.integers(len(ALPHABET)))]
        rot = float(rng.uniform(0.0, 360.0))
        stroke = max(2.0, round(stroke_frac * min(sh, sw)))
        g = render_glyph_mask(gid, sh, sw, stroke, rot)
        mask[r * sh : (r + 1) * sh, c * sw : (c + 1) * sw] = np.maximum(
            mask[r * sh : (r + 1) * sh, c * sw : (c + 1) * sw], g
        )
        parts.append({"glyph": gid, "rotation": rot, "slot": [r, c], "stroke": stroke})
    return mask, parts


def build_training_triplet(element: ElementSpec, layout: LayoutSpec, rng_seed: int) -> TrainingTriplet:
    rng = np.random.default_rng([rng_seed, element.seed])
    mask, parts = composite_glyph_mask(layout, rng)
    while not mask.any():  # a rotated glyph can only vanish at absurdly small sizes
        mask, parts = composite_glyph_mask(layout, rng)
    truth = synth_ground_truth_full(element, mask)
    ref = build_reference_region(
        truth.image,
        mask,
        element.kind,
        layout,
        rng_seed=int(rng.integers(2**31)),
        texture=truth.texture,
        instances=[p.instance for p in truth.placements] or None,
    )
    H, g0 = layout.H, layout.glyph_start
    inp = np.zeros((H, layout.w_total, 3))
    inp[:, : layout.w_ref] = ref.image
    gt = inp.copy()
    gt[:, g0:] = truth.image
    gmask = np.zeros((H, layout.w_total))
    gmask[:, g0:] = mask
    prov = {
        "element": element.to_dict(),
        "rng_seed": rng_seed,
        "k": len(parts),
        "glyphs": parts,
        "reference": ref.provenance,
        "object_coverage": truth.coverage,
    }
    return TrainingTriplet(
        input=inp,
        glyph_mask=gmask,
        gt=gt,
        element_kind=element.kind,
        provenance=prov,
        ref_coverage=ref.coverage,
        glyph_gt=truth.image,
        layout=layout,
    )


def edge_band(glyph_mask: np.ndarray, k: int) -> np.ndarray:
    """Narrow band along the glyph contour: ``dilate(mask, k) XOR erode(mask, k)``."""
    if k <= 0:
        return np.zeros_like(np.asarray(glyph_mask, dtype=np.float64))
    return np.logical_xor(dilate(glyph_mask, k) > 0.5, erode(glyph_mask, k) > 0.5).astype(np.float64)


def edge_context_reference(glyph_img: np.ndarray, layout: LayoutSpec) -> np.ndarray:
    """Centre crop of the glyph image to ``H x w_ref``: the context strip for edge repainting."""
    off = (layout.W - layout.w_ref) // 2
    return np.asarray(glyph_img)[:, off : off + layout.w_ref].copy()


def edge_repaint_canvases(glyph: np.ndarray, glyph_mask: np.ndarray, layout: LayoutSpec, k: int):
    """Input, inpaint mask and target canvases for repainting the contour band of ``glyph``."""
    g0 = layout.glyph_start
    band = edge_band(glyph_mask, k)
    inp = np.zeros((layout.H, layout.w_total, 3))
    inp[:, : layout.w_ref] = edge_context_reference(glyph, layout)
    inp[:, g0:] = glyph * (1.0 - band)[..., None]
    gt = inp.copy()
    gt[:, g0:] = glyph
    inpaint = np.zeros((layout.H, layout.w_total))
    inpaint[:, g0:] = band
    return inp, inpaint, gt


def edge_repaint_triplet(tri: TrainingTriplet, k: int) -> TrainingTriplet:
    """Re-target a triplet to edge repainting: inpaint only the contour band of its glyph."""
    lay = tri.layout
    inp, gmask, gt = edge_repaint_canvases(tri.glyph_gt, tri.glyph_mask[:, lay.glyph_start :], lay, k)
    prov = dict(tri.provenance, edge_band_radius=k)
    return TrainingTriplet(
        input=inp,
        glyph_mask=gmask,
        gt=gt,
        element_kind=tri.element_kind,
        provenance=prov,
        ref_coverage=np.ones((lay.H, lay.w_ref)),
        glyph_gt=tri.glyph_gt,
        layout=lay,
    )
