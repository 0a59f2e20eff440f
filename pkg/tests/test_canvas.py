import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from glyphfill.canvas import (
    Region,
    as_image,
    compose_input,
    derive_layout,
    extract_glyph_region,
    extract_reference_region,
    paste_glyph_region,
    region_label_columns,
    token_region_labels,
)
from glyphfill.errors import ShapeError


def brute_force_token_counts(layout):
    """Label every pixel column by explicit interval tests, then count p x p blocks by their top-left pixel."""
    counts = {Region.REF: 0, Region.BAND: 0, Region.GLYPH: 0}
    for r in range(0, layout.H, layout.patch):
        for c in range(0, layout.w_total, layout.patch):
            if c < layout.W // 2:
                counts[Region.REF] += 1
            elif c < layout.W // 2 + layout.w_band:
                counts[Region.BAND] += 1
            else:
                counts[Region.GLYPH] += 1
    return counts


@st.composite
def layouts(draw):
    patch = draw(st.sampled_from([1, 2, 4, 8]))
    H = patch * draw(st.integers(1, 16))
    W = 2 * patch * draw(st.integers(1, 12))
    return derive_layout(H, W, patch)


@pytest.mark.parametrize(
    "args, expected",
    [((64, 64, 2), (32, 2, 98)), ((64, 64, 4), (32, 4, 100)), ((32, 32, 2), (16, 2, 50))],
)
def test_derive_layout_examples(args, expected):
    lay = derive_layout(*args)
    assert (lay.w_ref, lay.w_band, lay.w_total) == expected


@pytest.mark.parametrize("args, word", [((63, 64, 2), "H"), ((64, 62, 4), "W"), ((64, 63, 1), "even"), ((8, 12, 4), "W/2")])
def test_derive_layout_rejects_bad_dims(args, word):
    with pytest.raises(ShapeError, match=word):
        derive_layout(*args)


@given(layouts())
def test_layout_invariants(lay):
    assert lay.w_total == lay.w_ref + lay.w_band + lay.W
    for v in (lay.H, lay.W, lay.w_ref, lay.w_band):
        assert v % lay.patch == 0
    # smallest patch multiple >= W/32
    assert lay.w_band * 32 >= lay.W
    assert (lay.w_band - lay.patch) * 32 < lay.W


def test_compose_black_reference_gives_zero_image(rng):
    lay = derive_layout(32, 32, 2)
    mask = (rng.random((32, 32)) > 0.5).astype(float)
    cv = compose_input(np.zeros((32, 16, 3)), mask, lay)
    assert not cv.image.any()


def test_compose_copies_reference_and_mask(rng):
    lay = derive_layout(32, 32, 2)
    ref = rng.random((32, 16, 3))
    cv = compose_input(ref, np.ones((32, 32)), lay)
    assert np.array_equal(cv.image[:, :16], ref)
    assert cv.inpaint_mask.sum() == 32 * 32
    assert not cv.inpaint_mask[:, : lay.glyph_start].any()
    assert np.array_equal(cv.region_labels[0], region_label_columns(lay))


def test_compose_rejects_bad_inputs(rng):
    lay = derive_layout(32, 32, 2)
    with pytest.raises(ShapeError):
        compose_input(np.zeros((32, 15, 3)), np.zeros((32, 32)), lay)
    with pytest.raises(ShapeError):
        compose_input(np.zeros((32, 16, 3)), np.zeros((32, 30)), lay)
    with pytest.raises(ValueError, match="binary"):
        compose_input(np.zeros((32, 16, 3)), np.full((32, 32), 0.5), lay)


def test_as_image_clamps():
    img = as_image(np.array([[[-1.0, 0.5, 2.0]]]))
    assert img.tolist() == [[[0.0, 0.5, 1.0]]]
    with pytest.raises(ValueError):
        as_image(np.array([[[np.nan, 0, 0]]]))


def test_extract_after_compose_is_blank(rng):
    lay = derive_layout(16, 16, 2)
    cv = compose_input(rng.random((16, 8, 3)), np.ones((16, 16)), lay)
    assert not extract_glyph_region(cv.image, lay).any()
    assert np.array_equal(extract_reference_region(cv.image, lay), cv.image[:, :8])


@given(layouts(), st.integers(0, 2**31 - 1))
def test_paste_extract_round_trip(lay, seed):
    g = np.random.default_rng(seed).random((lay.H, lay.W, 3))
    canvas = np.random.default_rng(seed + 1).random((lay.H, lay.w_total, 3))
    out = paste_glyph_region(canvas, g, lay)
    assert np.array_equal(extract_glyph_region(out, lay), g)
    assert np.array_equal(out[:, : lay.glyph_start], canvas[:, : lay.glyph_start])


def test_extract_rejects_wrong_width():
    lay = derive_layout(16, 16, 2)
    with pytest.raises(ShapeError):
        extract_glyph_region(np.zeros((16, 20, 3)), lay)


def test_token_counts_desk_layout():
    lab = token_region_labels(derive_layout(64, 64, 2))
    assert lab.shape == (32, 49)
    counts = [int((lab == r).sum()) for r in Region]
    assert counts == [512, 32, 1024]
    assert sum(counts) == 1568


def test_token_grid_small_layout():
    assert token_region_labels(derive_layout(32, 32, 2)).shape == (16, 25)


@given(layouts())
def test_token_counts_match_brute_force(lay):
    lab = token_region_labels(lay)
    oracle = brute_force_token_counts(lay)
    for r in Region:
        assert int((lab == r).sum()) == oracle[r]
    assert lab.size == (lay.H // lay.patch) * (lay.w_total // lay.patch)
    assert (lab == lab[0]).all()
