"""Procedural elements: amorphous textures and object sprites, and stylized glyphs built from them."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from skimage.draw import polygon2mask

from glyphfill.canvas import as_mask, is_binary
from glyphfill.synth.noise import apply_palette, fractal_noise


class ElementKind(str, enum.Enum):
    AMORPHOUS = "amorphous"
    OBJECT = "object"


class ShapeFamily(str, enum.Enum):
    DISC = "disc"
    STAR = "star"
    POLYGON = "polygon"
    BLOB = "blob"


@dataclass(frozen=True)
class ElementSpec:
    kind: ElementKind
    seed: int
    palette: tuple[tuple[float, float, float], ...]
    noise_octaves: int = 3
    shape_family: ShapeFamily = ShapeFamily.DISC
    size_range: tuple[int, int] = (8, 14)

    def __post_init__(self):
        if not 2 <= len(self.palette) <= 4:
            raise ValueError("palette needs 2 to 4 anchors")
        pal = np.asarray(self.palette, dtype=np.float64)
        if pal.shape[1] != 3 or pal.min() < 0 or pal.max() > 1:
            raise ValueError("palette anchors must be RGB triples in [0, 1]")
        lo, hi = self.size_range
        if lo < 2 or hi < lo:
            raise ValueError(f"bad size_range {self.size_range}")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "seed": self.seed,
            "palette": [list(a) for a in self.palette],
            "noise_octaves": self.noise_octaves,
            "shape_family": self.shape_family.value,
            "size_range": list(self.size_range),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ElementSpec":
        return cls(
            kind=ElementKind(d["kind"]),
            seed=int(d["seed"]),
            palette=tuple(tuple(float(v) for v in a) for a in d["palette"]),
            noise_octaves=int(d["noise_octaves"]),
            shape_family=ShapeFamily(d["shape_family"]),
            size_range=tuple(d["size_range"]),
        )


def random_element_spec(kind: ElementKind | str, seed: int) -> ElementSpec:
    """Draw a random element whose palette stays bright enough to separate from black."""
    kind = ElementKind(kind)
    rng = np.random.default_rng([seed, 7919])
    n_anchors = int(rng.integers(2, 5))
    anchors = []
    for _ in range(n_anchors):
        # rescale until luminance >= 0.3 so the glyph never blends into the background
        c = rng.uniform(0.0, 1.0, 3)
        lum = c @ np.array([0.299, 0.587, 0.114])
        if lum < 0.3:
            c = np.clip(c + (0.3 - lum) + 0.05, 0.0, 1.0)
        anchors.append(tuple(float(v) for v in c))
    return ElementSpec(
        kind=kind,
        seed=seed,
        palette=tuple(anchors),
        noise_octaves=int(rng.integers(1, 5)),
        shape_family=ShapeFamily(rng.choice([f.value for f in ShapeFamily])),
        size_range=(8, 14),
    )


def gen_amorphous_texture(spec: ElementSpec, h: int, w: int) -> np.ndarray:
    if spec.kind is not ElementKind.AMORPHOUS:
        raise ValueError(f"gen_amorphous_texture needs an amorphous element, got {spec.kind.value}")
    rng = np.random.default_rng([spec.seed, h, w])
    field_ = fractal_noise(h, w, spec.noise_octaves, base_cell=max(h, w) / 4.0, rng=rng)
    return apply_palette(field_, spec.palette)


@dataclass
class ObjectInstance:
    sprite: np.ndarray  # (s, s, 3)
    alpha: np.ndarray  # (s, s), binary

    @property
    def size(self) -> int:
        return self.alpha.shape[0]


def _shape_alpha(family: ShapeFamily, s: int, rng: np.random.Generator) -> np.ndarray:
    r = s / 2.0
    if family is ShapeFamily.DISC:
        yy, xx = np.mgrid[0:s, 0:s] + 0.5
        d2 = (yy - r) ** 2 + (xx - r) ** 2
        # among the centred pixel discs pick the one whose area is closest to pi r^2;
        # the plain d2 <= r^2 rule is off by up to 8% at these small sizes
        cuts = np.unique(d2)
        areas = np.searchsorted(np.sort(d2.ravel()), cuts, side="right")
        cut = cuts[np.argmin(np.abs(areas - np.pi * r * r))]
        return (d2 <= cut).astype(np.float64)

    phase = rng.uniform(0, 2 * np.pi)
    if family is ShapeFamily.STAR:
        n = int(rng.integers(5, 8))
        ang = phase + np.arange(2 * n) * np.pi / n
        rad = np.where(np.arange(2 * n) % 2 == 0, r, 0.45 * r)
    elif family is ShapeFamily.POLYGON:
        n = int(rng.integers(3, 9))
        ang = phase + np.arange(n) * 2 * np.pi / n
        rad = np.full(n, r)
    else:
        ang = phase + np.linspace(0, 2 * np.pi, 48, endpoint=False)
        amps = rng.uniform(0.0, 0.12, 3)
        phases = rng.uniform(0, 2 * np.pi, 3)
        wobble = sum(a * np.sin((k + 2) * ang + p) for k, (a, p) in enumerate(zip(amps, phases)))
        rad = r * (0.85 + wobble) / (0.85 + amps.sum())
    poly = np.stack([r + rad * np.sin(ang), r + rad * np.cos(ang)], axis=1)  # (row, col)
    # vertices sit on pixel corners; shift so pixel centers are tested
    return polygon2mask((s, s), poly - 0.5).astype(np.float64)


def gen_object_instances(spec: ElementSpec, n: int) -> list[ObjectInstance]:
    """``n`` textured sprites of the element's shape family, deterministic in ``(seed, n)``."""
    if spec.kind is not ElementKind.OBJECT:
        raise ValueError(f"gen_object_instances needs an object element, got {spec.kind.value}")
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng([spec.seed, n, 31])
    lo, hi = spec.size_range
    out = []
    for _ in range(n):
        s = int(rng.integers(lo, hi + 1))
        alpha = _shape_alpha(spec.shape_family, s, rng)
        fill = apply_palette(fractal_noise(s, s, max(spec.noise_octaves, 1), s / 2.0, rng), spec.palette)
        # radial shading gives each sprite a visible internal structure
        yy, xx = np.mgrid[0:s, 0:s] + 0.5
        d = np.sqrt((yy - s / 2) ** 2 + (xx - s / 2) ** 2) / (s / 2)
        shade = 1.0 - 0.35 * np.clip(d, 0, 1) ** 2
        sprite = np.clip(fill * shade[..., None], 0, 1) * alpha[..., None]
        out.append(ObjectInstance(sprite=sprite, alpha=alpha))
    return out


@dataclass
class Placement:
    instance: ObjectInstance
    top: int
    left: int


@dataclass
class GroundTruth:
    image: np.ndarray
    texture: np.ndarray | None = None
    placements: list[Placement] = field(default_factory=list)
    coverage: float = 1.0
    attempts: int = 0


def _paste(canvas, occupancy, inst: ObjectInstance, cy: int, cx: int) -> tuple[int, int]:
    H, W = occupancy.shape
    s = inst.size
    top, left = cy - s // 2, cx - s // 2
    y0, x0 = max(top, 0), max(left, 0)
    y1, x1 = min(top + s, H), min(left + s, W)
    a = inst.alpha[y0 - top : y1 - top, x0 - left : x1 - left] > 0.5
    canvas[y0:y1, x0:x1][a] = inst.sprite[y0 - top : y1 - top, x0 - left : x1 - left][a]
    occupancy[y0:y1, x0:x1] |= a
    return top, left


def synth_ground_truth_full(
    element: ElementSpec, glyph_mask: np.ndarray, max_attempts: int = 256, target_coverage: float = 0.7
) -> GroundTruth:
    """Stylized glyph on pure black, keeping the texture or placed instances for later reuse."""
    mask = as_mask(glyph_mask, "glyph_mask")
    if not is_binary(mask):
        raise ValueError("glyph_mask must be binary")
    inside = mask > 0.5
    if not inside.any():
        raise ValueError("glyph_mask is empty")
    H, W = mask.shape

    if element.kind is ElementKind.AMORPHOUS:
        tex = gen_amorphous_texture(element, H, W)
        return GroundTruth(image=tex * mask[..., None], texture=tex)

    rng = np.random.default_rng([element.seed, H, W, int(inside.sum())])
    pool = gen_object_instances(element, 6)
    image = np.zeros((H, W, 3))
    occupancy = np.zeros((H, W), dtype=bool)
    placements = []
    n_mask = inside.sum()
    attempts = 0
    while attempts < max_attempts and (occupancy & inside).sum() / n_mask < target_coverage:
        attempts += 1
        free = np.flatnonzero(inside & ~occupancy)
        if free.size == 0:
            break
        idx = free[rng.integers(free.size)]
        cy, cx = divmod(int(idx), W)
        inst = pool[int(rng.integers(len(pool)))]
        before = (occupancy & inside).sum()
        trial_img, trial_occ = image.copy(), occupancy.copy()
        top, left = _paste(trial_img, trial_occ, inst, cy, cx)
        if (trial_occ & inside).sum() > before:
            image, occupancy = trial_img, trial_occ
            placements.append(Placement(inst, top, left))
    coverage = float((occupancy & inside).sum() / n_mask)
    return GroundTruth(image=image, placements=placements, coverage=coverage, attempts=attempts)


def synth_ground_truth(element: ElementSpec, glyph_mask: np.ndarray) -> np.ndarray:
    return synth_ground_truth_full(element, glyph_mask).image
