"""Euler integration of the learned flow, plus the generate / mix / edge-repaint pipelines."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np
import torch

from glyphfill.canvas import (
    CompositeCanvas,
    LayoutSpec,
    as_image,
    as_mask,
    compose_input,
    extract_glyph_region,
    region_label_columns,
    token_region_labels,
)
from glyphfill.errors import ConfigError, KindMismatchError, NonFiniteError, ShapeError
from glyphfill.flow import AdapterKind, AdapterSet
from glyphfill.mmdit import Denoiser
from glyphfill.redirection import (
    RegionSets,
    SuppressionSpec,
    bias_tensor,
    build_region_mix_rules,
    dehallucination_spec,
    derive_region_sets,
)
from glyphfill.synth.morph import segment_foreground
from glyphfill.synth.triplets import edge_band, edge_repaint_canvases


@dataclass
class SampleConfig:
    steps: int = 32
    seed: int = 0
    lam: float = 0.3
    mix_rules: tuple | None = None  # fractional horizontal cuts, e.g. (0.5,)
    mix_lam: float = 0.3
    edge_repaint: bool = False
    band_radius: int = 2
    redirect: bool = True
    tau: float = 0.5

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigError(f"steps must be >= 1, got {self.steps}")
        for name in ("lam", "mix_lam"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ConfigError(f"{name} must lie in (0, 1], got {v}")
        if self.band_radius < 0:
            raise ConfigError("band_radius must be >= 0")
        if self.mix_rules is not None:
            self.mix_rules = tuple(float(f) for f in self.mix_rules)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mix_rules"] = None if self.mix_rules is None else list(self.mix_rules)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SampleConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown sample config keys: {sorted(unknown)}")
        return cls(**d)


def _batch(arr, dtype) -> torch.Tensor:
    return torch.as_tensor(np.asarray(arr), dtype=dtype).unsqueeze(0)


def euler_sample(
    model,
    cond: CompositeCanvas,
    adapters: AdapterSet | None,
    spec: SampleConfig,
    bias: torch.Tensor | None = None,
    clamp: bool = True,
    return_noise: bool = False,
):
    """Integrate from seeded noise at ``t = 1`` down to ``t = 0`` in ``spec.steps`` uniform Euler steps.

    ``model`` is a :class:`Denoiser` or any callable ``(x, cond_image, mask, t, bias) -> v``.
    """
    if isinstance(model, Denoiser):
        model.attach(adapters)
        dtype = model.pos.dtype
    else:
        dtype = torch.float64
    lay = cond.layout
    gen = torch.Generator().manual_seed(spec.seed)
    noise = torch.randn((1, lay.H, lay.w_total, 3), generator=gen, dtype=dtype)
    cond_image = _batch(cond.image, dtype)
    mask = _batch(cond.inpaint_mask, dtype)
    x = noise.clone()
    n = spec.steps
    with torch.no_grad():
        for i in range(n, 0, -1):
            t = torch.full((1,), i / n, dtype=dtype)
            v = model(x, cond_image, mask, t, bias)
            x = x - v / n
            if not torch.all(torch.isfinite(x)):
                raise NonFiniteError(f"sampler state became non-finite at step t={i}/{n}")
    if clamp:
        x = x.clamp(0.0, 1.0)
    out = x[0].to(torch.float64).numpy()
    return (out, noise[0].to(torch.float64).numpy()) if return_noise else out


def token_average(field: np.ndarray, patch: int) -> np.ndarray:
    H, W = field.shape
    if H % patch or W % patch:
        raise ShapeError(f"field {H}x{W} not divisible by patch {patch}")
    return field.reshape(H // patch, patch, W // patch, patch).mean(axis=(1, 3))


def reference_coverage(element: np.ndarray, kind) -> np.ndarray:
    """Foreground coverage of a reference strip: all ones for amorphous, thresholded luminance for objects."""
    if AdapterKind.parse(kind) is AdapterKind.OBJECT:
        return segment_foreground(element)
    return np.ones(element.shape[:2])


def canvas_region_sets(cond: CompositeCanvas, ref_coverage: np.ndarray, tau: float, text_len: int) -> RegionSets:
    lay = cond.layout
    labels = token_region_labels(lay)
    cover = np.zeros((lay.H, lay.w_total))
    cover[:, : lay.w_ref] = ref_coverage
    return derive_region_sets(
        labels,
        token_average(cond.inpaint_mask, lay.patch),
        token_average(cover, lay.patch),
        tau=tau,
        text_len=text_len,
    )


def redirection_spec(model: Denoiser, cond: CompositeCanvas, ref_coverage, spec: SampleConfig) -> SuppressionSpec:
    regions = canvas_region_sets(cond, ref_coverage, spec.tau, model.cfg.text_len)
    out = dehallucination_spec(regions, spec.lam, model.cfg.n_img_tokens)
    if spec.mix_rules:
        out = out + build_region_mix_rules(cond.layout, spec.mix_rules, spec.mix_lam, model.cfg.text_len)
    return out


def _check_kind(adapters: AdapterSet | None, kind) -> AdapterKind:
    kind = AdapterKind.parse(kind)
    if kind is AdapterKind.EDGE_REPAINT:
        raise KindMismatchError("generation needs an amorphous or object adapter, not edge_repaint")
    if adapters is None:
        raise ConfigError(f"no adapter loaded for kind {kind.value!r}")
    if adapters.kind is not kind:
        raise KindMismatchError(f"adapter kind {adapters.kind.value!r} does not match requested {kind.value!r}")
    return kind


def generate(
    model: Denoiser,
    element: np.ndarray,
    glyph_mask: np.ndarray,
    kind,
    spec: SampleConfig,
    adapters: AdapterSet,
    edge_adapters: AdapterSet | None = None,
    ref_coverage: np.ndarray | None = None,
    return_canvas: bool = False,
    edge_model: Denoiser | None = None,
):
    """Render ``glyph_mask`` in the style of ``element`` (an ``H x w_ref`` strip).

    With ``spec.edge_repaint`` the contour band is then repainted by ``edge_adapters``,
    on ``edge_model`` if given (the edge adapter's own base), else on ``model``.
    """
    kind = _check_kind(adapters, kind)
    lay = model.layout
    cond = compose_input(element, glyph_mask, lay)
    bias = None
    if spec.redirect:
        cover = reference_coverage(cond.image[:, : lay.w_ref], kind) if ref_coverage is None else ref_coverage
        bias = bias_tensor(redirection_spec(model, cond, cover, spec), model.cfg.n_tokens, model.pos.dtype)
    canvas = euler_sample(model, cond, adapters, spec, bias)
    glyph = extract_glyph_region(canvas, lay)
    if spec.edge_repaint:
        if edge_adapters is None:
            raise ConfigError("edge repainting requested without an edge_repaint adapter")
        glyph = edge_repaint(model if edge_model is None else edge_model, glyph, glyph_mask, spec.band_radius, edge_adapters, spec)
        model.attach(adapters)
    return (glyph, canvas) if return_canvas else glyph


def strip_rows(weights, n_rows: int) -> list[int]:
    """Split ``n_rows`` token rows in proportion to ``weights`` by largest remainder; every element gets >= 1."""
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or w.size == 0 or np.any(w <= 0) or not np.all(np.isfinite(w)):
        raise ConfigError("mix weights must be positive and finite")
    if w.size > n_rows:
        raise ShapeError(f"{w.size} elements do not fit in {n_rows} token rows")
    share = w / w.sum() * n_rows
    rows = np.floor(share).astype(int)
    for i in np.argsort(-(share - rows), kind="stable")[: n_rows - rows.sum()]:
        rows[i] += 1
    while np.any(rows == 0):
        rows[np.argmax(rows)] -= 1
        rows[np.argmin(rows)] += 1
    return rows.tolist()


def assemble_reference(elements, layout: LayoutSpec) -> np.ndarray:
    """Stack elements as horizontal strips whose heights follow their weights (rounded to token rows).

    ``elements`` is a list of ``(image, weight)``. Each strip is the top-left crop of its
    element, tiled when the element is smaller than the strip.
    """
    images = [as_image(img, "element") for img, _ in elements]
    rows = strip_rows([w for _, w in elements], layout.H // layout.patch)
    ref = np.zeros((layout.H, layout.w_ref, 3))
    y = 0
    for img, r in zip(images, rows):
        h = r * layout.patch
        reps = (-(-h // img.shape[0]), -(-layout.w_ref // img.shape[1]), 1)
        ref[y : y + h] = np.tile(img, reps)[:h, : layout.w_ref]
        y += h
    return ref


def mix_styles(
    model: Denoiser,
    elements,
    glyph_mask: np.ndarray,
    kind,
    spec: SampleConfig,
    adapters: AdapterSet,
    edge_adapters: AdapterSet | None = None,
    return_reference: bool = False,
    edge_model: Denoiser | None = None,
):
    """Assemble a weighted multi-element reference strip, then :func:`generate` from it."""
    ref = assemble_reference(elements, model.layout)
    out = generate(model, ref, glyph_mask, kind, spec, adapters, edge_adapters, edge_model=edge_model)
    return (out, ref) if return_reference else out


def edge_repaint(
    model: Denoiser,
    glyph_img: np.ndarray,
    glyph_mask: np.ndarray,
    k: int,
    adapters: AdapterSet,
    spec: SampleConfig,
) -> np.ndarray:
    """Re-synthesise the contour band of a generated glyph; every pixel outside the band is kept as is."""
    if adapters is None or adapters.kind is not AdapterKind.EDGE_REPAINT:
        raise KindMismatchError("edge repainting needs an edge_repaint adapter")
    glyph_img = np.asarray(glyph_img, dtype=np.float64)
    glyph_mask = as_mask(glyph_mask, "glyph_mask")
    lay = model.layout
    if glyph_img.shape != (lay.H, lay.W, 3) or glyph_mask.shape != (lay.H, lay.W):
        raise ShapeError(f"edge_repaint: expected {(lay.H, lay.W)} glyph and mask")
    if k == 0:
        return glyph_img.copy()
    band = edge_band(glyph_mask, k)
    if not band.any():
        raise ValueError("edge band is empty (empty glyph mask?)")
    image, inpaint, _ = edge_repaint_canvases(glyph_img, glyph_mask, lay, k)
    labels = np.broadcast_to(region_label_columns(lay), inpaint.shape).copy()
    cond = CompositeCanvas(image=image, inpaint_mask=inpaint, region_labels=labels, layout=lay)
    canvas = euler_sample(model, cond, adapters, spec)
    repainted = canvas[:, lay.glyph_start :]
    return np.where(band[..., None] > 0.5, repainted, glyph_img)
