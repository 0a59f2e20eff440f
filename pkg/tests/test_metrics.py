import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from glyphfill.metrics import (
    FEATURE_DIM,
    aggregate,
    background_cleanliness,
    edge_patch_centres,
    evaluate_pair,
    frechet_trace_root_eig,
    mask_iou,
    orientation_histogram,
    patch_features,
    patch_frechet,
    patch_frechet_eig,
    sample_edge_patches,
)
from glyphfill.synth.elements import random_element_spec, synth_ground_truth
from glyphfill.synth.morph import contour_pixels, dilate
from glyphfill.synth.triplets import composite_glyph_mask
from glyphfill.canvas import derive_layout


def gaussian_set(rng, n, d=FEATURE_DIM):
    A = rng.normal(size=(d, d)) / np.sqrt(d)
    return rng.normal(size=(n, d)) @ A + rng.normal(size=d)


def disc(r, size=64):
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    return ((yy - size / 2) ** 2 + (xx - size / 2) ** 2 <= r * r).astype(float)


# -- features ---------------------------------------------------------------


def test_features_match_loops(rng):
    patch = rng.random((6, 6, 3))
    f = patch_features(patch)
    assert f.shape == (FEATURE_DIM,)
    px = patch.reshape(-1, 3)
    mu = [sum(p[c] for p in px) / 36 for c in range(3)]
    cov = [sum((p[a] - mu[a]) * (p[b] - mu[b]) for p in px) / 36 for a in range(3) for b in range(a, 3)]
    assert np.allclose(f[:3], mu, atol=1e-14) and np.allclose(f[3:9], cov, atol=1e-14)
    assert f[9:].sum() == pytest.approx(1.0)


def test_orientation_of_vertical_and_horizontal_edges():
    patch = np.zeros((8, 8, 3))
    patch[:, 4:] = 1
    h = orientation_histogram(patch)
    assert h[0] == pytest.approx(1.0)
    h = orientation_histogram(np.transpose(patch, (1, 0, 2)))
    assert h[4] == pytest.approx(1.0)  # gradient along y: angle pi/2
    assert not orientation_histogram(np.full((8, 8, 3), 0.4)).any()


def test_orientation_folds_opposite_directions():
    up = np.zeros((8, 8, 3))
    up[:, 4:] = 1
    down = 1 - up
    assert np.allclose(orientation_histogram(up), orientation_histogram(down))


# -- edge patches -----------------------------------------------------------


def test_patch_centres_on_contour_and_deterministic():
    m = disc(20)
    c = edge_patch_centres(m, 50, seed=3)
    cont = contour_pixels(m)
    assert all(cont[y, x] for y, x in c)
    assert np.array_equal(c, edge_patch_centres(m, 50, seed=3))
    img = np.random.default_rng(0).random((64, 64, 3))
    a = sample_edge_patches(img, m, 10, seed=3)
    b = sample_edge_patches(img, m, 10, seed=3)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert all(p.shape == (8, 8, 3) for p in a)


@pytest.mark.parametrize("r", [8, 14, 20, 26])
def test_disc_centres_at_radius(r):
    c = edge_patch_centres(disc(r), 200, seed=1) + 0.5
    dist = np.hypot(c[:, 0] - 32, c[:, 1] - 32)
    assert r - 1 <= dist.mean() <= r + 1


def test_patches_clamped_at_border():
    m = np.zeros((32, 32))
    m[:6, :6] = 1
    for p in sample_edge_patches(np.ones((32, 32, 3)), m, 20, size=8):
        assert p.shape == (8, 8, 3)


def test_patch_errors():
    with pytest.raises(ValueError):
        sample_edge_patches(np.zeros((16, 16, 3)), np.zeros((16, 16)), 4)
    with pytest.raises(ValueError):
        sample_edge_patches(np.zeros((16, 16, 3)), disc(4, 16), 4, size=9)


# -- Frechet distance -------------------------------------------------------


def test_self_distance_zero(rng):
    A = gaussian_set(rng, 64)
    assert patch_frechet(A, A).value < 1e-8


def test_symmetry(rng):
    A, B = gaussian_set(rng, 64), gaussian_set(rng, 80)
    assert abs(patch_frechet(A, B).value - patch_frechet(B, A).value) < 1e-9


@given(st.integers(0, 2**31 - 1))
def test_shift_identity_against_eigen_oracle(seed):
    rng = np.random.default_rng(seed)
    A = gaussian_set(rng, 64)
    d = rng.normal(size=FEATURE_DIM)
    fd = patch_frechet(A, A + d).value
    assert abs(fd - d @ d) < 1e-6
    assert abs(patch_frechet_eig(A, A + d).value - d @ d) < 1e-6


@given(st.integers(0, 2**31 - 1))
def test_sqrtm_matches_eigen_oracle(seed):
    rng = np.random.default_rng(seed)
    A, B = gaussian_set(rng, 40), gaussian_set(rng, 50)
    assert abs(patch_frechet(A, B).value - patch_frechet_eig(A, B).value) < 1e-6


def test_trace_root_of_commuting_diagonals():
    s1, s2 = np.diag([1.0, 4.0, 9.0]), np.diag([4.0, 1.0, 0.25])
    assert frechet_trace_root_eig(s1, s2) == pytest.approx(2 + 2 + 1.5)


def test_brightness_shift_increases_distance(rng):
    A = gaussian_set(rng, 64)
    values = [patch_frechet(A, A + s).value for s in (0.0, 0.1, 0.2, 0.4)]
    assert all(x < y for x, y in zip(values, values[1:]))


def test_small_sets_are_shrunk(rng):
    A, B = gaussian_set(rng, 10), gaussian_set(rng, 30)
    score = patch_frechet(A, B)
    assert score.shrunk and score.value >= 0 and (score.n_a, score.n_b) == (10, 30)
    assert not patch_frechet(gaussian_set(rng, 18), gaussian_set(rng, 18)).shrunk
    with pytest.raises(ValueError):
        patch_frechet(A[:1], B)


# -- mask adherence and cleanliness -----------------------------------------


def test_mask_iou_cases():
    m = disc(12, 32)
    white = np.repeat(m[..., None], 3, axis=2)
    assert mask_iou(white, m) == 1.0
    assert mask_iou(np.zeros((32, 32, 3)), m) == 0.0
    with pytest.raises(ValueError):
        mask_iou(white, m, threshold=0.0)


@pytest.mark.parametrize("seed", range(4))
def test_mask_iou_on_synthetic_glyph(seed):
    mask, _ = composite_glyph_mask(derive_layout(64, 64, 2), np.random.default_rng(seed))
    gt = synth_ground_truth(random_element_spec("amorphous", seed), mask)
    assert mask_iou(gt, mask) >= 0.9


def test_cleanliness_cases():
    mask, _ = composite_glyph_mask(derive_layout(64, 64, 2), np.random.default_rng(0))
    gt = synth_ground_truth(random_element_spec("amorphous", 0), mask)
    assert background_cleanliness(gt, mask) == 0.0
    inverted = np.repeat((1 - mask)[..., None], 3, axis=2)
    assert background_cleanliness(inverted, mask) == pytest.approx(1.0)
    outside = dilate(mask, 2) < 0.5
    ys, xs = np.nonzero(outside)
    # find a 4x4 block fully outside the dilated mask
    for y, x in zip(ys, xs):
        if y + 4 <= 64 and x + 4 <= 64 and outside[y : y + 4, x : x + 4].all():
            break
    blob = gt.copy()
    blob[y : y + 4, x : x + 4] = 1.0
    assert background_cleanliness(blob, mask) - background_cleanliness(gt, mask) == pytest.approx(16 / outside.sum(), abs=1e-12)
    with pytest.raises(ValueError):
        background_cleanliness(gt, np.ones((64, 64)))


@given(st.integers(0, 2**31 - 1))
def test_cleanliness_monotone(seed):
    rng = np.random.default_rng(seed)
    m = disc(10, 32)
    img = rng.random((32, 32, 3)) * 0.5
    brighter = img.copy()
    sel = rng.random((32, 32)) < 0.1
    brighter[sel] = np.minimum(1.0, brighter[sel] + 0.3)
    assert background_cleanliness(brighter, m) >= background_cleanliness(img, m)


# -- report rows ------------------------------------------------------------


def test_evaluate_pair_and_aggregate():
    mask, _ = composite_glyph_mask(derive_layout(64, 64, 2), np.random.default_rng(1))
    gt = synth_ground_truth(random_element_spec("amorphous", 1), mask)
    other = synth_ground_truth(random_element_spec("amorphous", 2), mask)
    row = evaluate_pair(gt, gt, mask, cross_gt=other)
    assert set(row) == {"patch_fd_same", "patch_fd_cross", "mask_iou", "cleanliness"}
    assert row["patch_fd_same"] < row["patch_fd_cross"]
    agg = aggregate({"a": {"x": 1.0, "y": 2.0}, "b": {"x": 3.0}})
    assert agg == {"x": 2.0, "y": 2.0}
