import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats
from skimage.measure import find_contours

from glyphfill.canvas import derive_layout
from glyphfill.synth.elements import (
    ElementKind,
    ElementSpec,
    ShapeFamily,
    gen_amorphous_texture,
    gen_object_instances,
    random_element_spec,
    synth_ground_truth,
    synth_ground_truth_full,
)
from glyphfill.synth.glyphs import ALPHABET, render_glyph_mask
from glyphfill.synth.morph import dilate, iou, refine_mask, segment_foreground
from glyphfill.synth.triplets import (
    build_reference_region,
    build_training_triplet,
    composite_glyph_mask,
    edge_band,
    edge_repaint_canvases,
)

BW = ((0.0, 0.0, 0.0), (1.0, 1.0, 1.0))
SMALL = derive_layout(32, 32, 2)


def amorphous(seed=0, octaves=3, palette=BW):
    return ElementSpec(ElementKind.AMORPHOUS, seed, palette, noise_octaves=octaves)


def disc_element(seed=0, size_range=(8, 14)):
    return ElementSpec(ElementKind.OBJECT, seed, ((0.9, 0.5, 0.2), (0.4, 0.8, 0.9)), shape_family=ShapeFamily.DISC, size_range=size_range)


def curvature_energy(mask, step=0.25, window=4):
    """Sum of squared tangent turning per unit arc length along the 0.5 iso-contour.

    Tangents are taken over a chord of ``window * step`` so the measure sees corner rounding at
    a scale above the marching-squares chamfer.
    """
    c = max(find_contours(np.pad(mask, 2), 0.5), key=len)
    s = np.r_[0.0, np.cumsum(np.hypot(*np.diff(c, axis=0).T))]
    u = np.arange(0.0, s[-1], step)
    p = np.c_[np.interp(u, s, c[:, 0]), np.interp(u, s, c[:, 1])]
    d = np.roll(p, -window, axis=0) - p
    a = np.arctan2(d[:, 0], d[:, 1])
    turn = np.angle(np.exp(1j * (np.roll(a, -1) - a)))
    return float(np.abs(turn).sum()), float((turn**2).sum() / step)


# -- textures ---------------------------------------------------------------


def test_texture_deterministic():
    spec = amorphous(5)
    assert np.array_equal(gen_amorphous_texture(spec, 40, 24), gen_amorphous_texture(spec, 40, 24))


def test_texture_black_white_spans_both_anchors():
    img = gen_amorphous_texture(amorphous(1, octaves=1), 64, 64)
    assert img.min() < 0.1 and img.max() > 0.9
    assert 0.0 <= img.min() and img.max() <= 1.0


def test_texture_zero_octaves_is_palette_midpoint():
    img = gen_amorphous_texture(amorphous(1, octaves=0, palette=((0.2, 0.4, 0.0), (0.6, 0.0, 1.0))), 16, 16)
    assert np.allclose(img, [0.4, 0.2, 0.5])


def test_texture_rejects_object_kind():
    with pytest.raises(ValueError, match="amorphous"):
        gen_amorphous_texture(disc_element(), 8, 8)


def test_element_spec_round_trip_and_validation():
    spec = random_element_spec("object", 11)
    assert ElementSpec.from_dict(spec.to_dict()) == spec
    with pytest.raises(ValueError):
        ElementSpec(ElementKind.AMORPHOUS, 0, ((0, 0, 0),))
    with pytest.raises(ValueError):
        ElementSpec(ElementKind.AMORPHOUS, 0, ((0, 0, 0), (1.5, 0, 0)))


# -- object instances -------------------------------------------------------


def test_disc_instances_match_circle_area():
    for inst in gen_object_instances(disc_element(3), 12):
        r = inst.size / 2.0
        assert abs(inst.alpha.sum() - np.pi * r * r) / (np.pi * r * r) < 0.05


@pytest.mark.parametrize("family", list(ShapeFamily))
def test_instances_invariants(family):
    spec = ElementSpec(ElementKind.OBJECT, 4, ((0.9, 0.9, 0.2), (0.2, 0.5, 0.9)), shape_family=family)
    a = gen_object_instances(spec, 5)
    b = gen_object_instances(spec, 5)
    for x, y in zip(a, b):
        assert np.array_equal(x.sprite, y.sprite) and np.array_equal(x.alpha, y.alpha)
        assert set(np.unique(x.alpha)) <= {0.0, 1.0}
        assert not (x.sprite * (1 - x.alpha)[..., None]).any()
        assert spec.size_range[0] <= x.size <= spec.size_range[1]


def test_instances_reject_amorphous():
    with pytest.raises(ValueError):
        gen_object_instances(amorphous(), 1)


# -- glyph masks ------------------------------------------------------------


def test_alphabet_covers_letters_and_digits():
    assert set("ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789") <= set(ALPHABET)


def test_glyph_i_is_single_bar():
    m = render_glyph_mask("I", 64, 64, 6)
    support = np.flatnonzero(m.sum(axis=0) > 0)
    assert support.size > 0
    assert support[-1] - support[0] + 1 == support.size


@pytest.mark.parametrize("gid", ["A", "G", "Q", "7"])
def test_glyph_full_turn_matches_upright(gid):
    assert iou(render_glyph_mask(gid, 64, 64, 6, 0.0), render_glyph_mask(gid, 64, 64, 6, 360.0)) >= 0.98


def test_glyph_errors():
    with pytest.raises(ValueError):
        render_glyph_mask("I", 32, 32, 0)
    with pytest.raises(ValueError):
        render_glyph_mask("a", 32, 32, 3)


@given(st.sampled_from(ALPHABET), st.floats(0, 360))
def test_glyph_masks_binary_nonempty(gid, rot):
    m = render_glyph_mask(gid, 48, 48, 5, rot)
    assert set(np.unique(m)) <= {0.0, 1.0}
    assert m.sum() > 0


# -- morphology -------------------------------------------------------------


def test_refine_zero_mask():
    assert not refine_mask(np.zeros((16, 16)), 2, 1.0).any()


def test_refine_removes_isolated_pixel():
    m = np.zeros((16, 16))
    m[8, 8] = 1
    assert not refine_mask(m, 1, 0.0).any()


@pytest.mark.parametrize("radius", [0, 1])
def test_refine_rounds_square_corners(radius):
    m = np.zeros((32, 32))
    m[8:24, 8:24] = 1
    out = refine_mask(m, radius, 2.0)
    for y, x in [(8, 8), (8, 23), (23, 8), (23, 23)]:
        assert out[y, x] == 0
    total_before, energy_before = curvature_energy(m)
    total_after, energy_after = curvature_energy(out)
    # a simple closed convex contour always turns by exactly 2 pi in total
    assert total_before == pytest.approx(2 * np.pi) and total_after == pytest.approx(2 * np.pi)
    assert energy_after < energy_before


def test_refine_rejects_soft_mask():
    with pytest.raises(ValueError):
        refine_mask(np.full((4, 4), 0.5), 1, 1.0)


@given(st.integers(1, 3), st.integers(0, 2**31 - 1))
def test_refine_preserves_thick_shapes(radius, seed):
    rng = np.random.default_rng(seed)
    m = np.zeros((64, 64))
    lo = 4 * radius
    for _ in range(rng.integers(1, 4)):
        h, w = rng.integers(lo, 3 * lo + 1, size=2)
        y, x = rng.integers(0, 64 - h), rng.integers(0, 64 - w)
        m[y : y + h, x : x + w] = 1
    out = refine_mask(m, radius, radius / 2.0)
    assert iou(out, m) >= 0.8


def test_segment_black_and_threshold_domain():
    assert not segment_foreground(np.zeros((8, 8, 3))).any()
    with pytest.raises(ValueError):
        segment_foreground(np.zeros((8, 8, 3)), 0.0)
    with pytest.raises(ValueError):
        segment_foreground(np.zeros((8, 8, 3)), 1.0)


@pytest.mark.parametrize("seed", range(6))
def test_segment_recovers_amorphous_glyph(seed):
    mask, _ = composite_glyph_mask(derive_layout(64, 64, 2), np.random.default_rng(seed))
    gt = synth_ground_truth(random_element_spec("amorphous", seed), mask)
    assert iou(segment_foreground(gt), mask) >= 0.9


# -- ground truth -----------------------------------------------------------


def test_amorphous_ground_truth_is_masked_texture():
    mask = render_glyph_mask("R", 48, 48, 6, 30.0)
    spec = amorphous(2)
    gt = synth_ground_truth(spec, mask)
    tex = gen_amorphous_texture(spec, 48, 48)
    inside = mask > 0.5
    assert np.array_equal(gt[inside], tex[inside])
    assert not gt[~inside].any()


def test_object_ground_truth_coverage_and_background():
    mask = render_glyph_mask("O", 64, 64, 14, 0.0)
    spec = disc_element(6)
    truth = synth_ground_truth_full(spec, mask)
    assert truth.coverage >= 0.7
    # instances only overhang the mask by their radius
    outside = dilate(mask, spec.size_range[1] // 2 + 1) < 0.5
    assert not truth.image[outside].any()


def test_ground_truth_rejects_empty_mask():
    with pytest.raises(ValueError, match="empty"):
        synth_ground_truth(amorphous(), np.zeros((8, 8)))


# -- reference region -------------------------------------------------------


def test_amorphous_reference_crops_are_literal():
    lay = derive_layout(64, 64, 2)
    mask = render_glyph_mask("M", 64, 64, 10, 0.0)
    gt = synth_ground_truth(amorphous(8), mask)
    ref = build_reference_region(gt, mask, "amorphous", lay, rng_seed=3)
    assert ref.image.shape == (64, lay.w_ref, 3)
    for i, (_, _, top, left) in enumerate(ref.provenance["crops"]):
        crop = gt[top : top + 32, left : left + lay.w_ref]
        assert np.array_equal(ref.image[32 * i : 32 * (i + 1)], crop)
    again = build_reference_region(gt, mask, "amorphous", lay, rng_seed=3)
    assert np.array_equal(ref.image, again.image)


def test_object_reference_shape_and_count():
    lay = derive_layout(64, 64, 2)
    mask = render_glyph_mask("O", 64, 64, 14, 0.0)
    truth = synth_ground_truth_full(disc_element(1), mask)
    ref = build_reference_region(truth.image, mask, "object", lay, 5, instances=[p.instance for p in truth.placements])
    assert ref.image.shape == (64, lay.w_ref, 3)
    assert 2 <= ref.provenance["n_instances"] <= 4
    assert not ref.image[ref.coverage < 0.5].any()


def test_reference_rejects_black_glyph():
    with pytest.raises(ValueError):
        build_reference_region(np.zeros((32, 32, 3)), np.ones((32, 32)), "amorphous", SMALL, 0)


# -- triplets ---------------------------------------------------------------


@pytest.mark.parametrize("kind", ["amorphous", "object"])
def test_triplet_invariants_over_seeds(kind):
    for seed in range(50):
        tri = build_training_triplet(random_element_spec(kind, seed), SMALL, seed)
        tri.check_invariants()
        g0 = SMALL.glyph_start
        assert not (tri.input[:, g0:] * (1 - tri.glyph_mask[:, g0:, None])).any()
        assert 1 <= tri.provenance["k"] <= 4


def test_triplet_amorphous_background_black():
    for seed in range(10):
        tri = build_training_triplet(random_element_spec("amorphous", seed), SMALL, seed)
        g0 = SMALL.glyph_start
        outside = dilate(tri.glyph_mask[:, g0:], 1) < 0.5
        assert not tri.gt[:, g0:][outside].any()


def test_glyph_count_uniform():
    ks = [len(composite_glyph_mask(SMALL, np.random.default_rng([s, 17]))[1]) for s in range(1000)]
    counts = np.bincount(ks, minlength=5)[1:]
    assert stats.chisquare(counts).pvalue > 0.01


def test_triplet_deterministic():
    spec = random_element_spec("object", 4)
    a, b = build_training_triplet(spec, SMALL, 9), build_training_triplet(spec, SMALL, 9)
    assert np.array_equal(a.gt, b.gt) and np.array_equal(a.glyph_mask, b.glyph_mask)
    assert a.provenance == b.provenance


# -- edge band --------------------------------------------------------------


def test_edge_band_zero_radius_empty():
    assert not edge_band(np.ones((8, 8)), 0).any()


def test_edge_repaint_canvases():
    lay = SMALL
    mask = render_glyph_mask("H", 32, 32, 6, 0.0)
    glyph = synth_ground_truth(amorphous(3), mask)
    inp, inpaint, gt = edge_repaint_canvases(glyph, mask, lay, 2)
    g0 = lay.glyph_start
    band = inpaint[:, g0:] > 0.5
    assert band.any() and not inpaint[:, :g0].any()
    assert np.array_equal(gt[:, g0:], glyph)
    assert not inp[:, g0:][band].any()
    assert np.array_equal(inp[:, g0:][~band], glyph[~band])
    assert np.array_equal(inp[:, : lay.w_ref], gt[:, : lay.w_ref])
