import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from htrclp import augment
from htrclp.augment import AugmentSpec, affine_matrix, warp_affine
from htrclp.data import HANDS, render_line
from htrclp.rng import substream


@pytest.fixture(scope="module")
def line():
    return render_line("quick brown fox", "A", HANDS["A"], 32, substream(0, "t"))


def test_identity_spec_is_pixel_identical(line):
    for kind in augment.KINDS:
        out = augment.apply(line, AugmentSpec.identity(kind), seed=3)
        np.testing.assert_array_equal(out, line)


def test_zero_sigma_rwgd_is_identity(line):
    np.testing.assert_array_equal(augment.rwgd(line, AugmentSpec(sigma_px=0.0), 1), line)


def test_same_seed_same_output(line):
    spec = AugmentSpec()
    np.testing.assert_array_equal(augment.apply(line, spec, 5), augment.apply(line, spec, 5))
    assert not np.array_equal(augment.apply(line, spec, 5), augment.apply(line, spec, 6))
    np.testing.assert_array_equal(augment.affine(line, spec, 2), augment.affine(line, spec, 2))
    np.testing.assert_array_equal(augment.rwgd(line, spec, 2), augment.rwgd(line, spec, 2))


@pytest.fixture(scope="module")
def clean_line():
    return render_line("quick brown fox", "A", HANDS["plain"], 32, substream(0, "t"))


@pytest.mark.parametrize("theta", [0.5, 1.0])
def test_rotation_round_trip(clean_line, theta):
    there = warp_affine(clean_line, affine_matrix(theta, 0, 1), expand=False)
    back = warp_affine(there, affine_matrix(-theta, 0, 1), expand=False)
    assert np.abs(back - clean_line).mean() <= 0.02


@pytest.mark.parametrize("theta", [1.0, 3.0, -2.0])
def test_rotation_matches_scipy_rotate(clean_line, theta):
    from scipy import ndimage

    ours = warp_affine(clean_line.astype(np.float64), affine_matrix(theta, 0, 1), expand=False)
    ref = ndimage.rotate(clean_line.astype(np.float64), -theta, reshape=False, order=1, cval=1.0)
    np.testing.assert_allclose(ours, np.clip(ref, 0, 1), atol=1e-9)


def test_rwgd_preserves_ink_mass(line):
    ink = (1 - line).sum()
    spec = AugmentSpec(kind="rwgd", sigma_px=1.5)
    masses = [(1 - augment.rwgd(line, spec, s)).sum() for s in range(100)]
    assert max(abs(m - ink) / ink for m in masses) <= 0.10


def test_small_image_passes_through_with_warning(caplog):
    tiny = np.ones((8, 8), np.float32)
    tiny[3, 3] = 0
    with caplog.at_level(logging.WARNING):
        out = augment.rwgd(tiny, AugmentSpec(grid_px=16), 0)
    np.testing.assert_array_equal(out, tiny)
    assert "grid cell" in caplog.text


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_outputs_stay_in_range_keep_height_and_never_narrow(seed):
    img = render_line("ab cd", "A", HANDS["plain"], 32, substream(seed, "t"))
    out = augment.apply(img, AugmentSpec(), seed)
    assert out.shape[0] == img.shape[0]
    assert out.shape[1] >= img.shape[1]
    assert out.min() >= 0.0 and out.max() <= 1.0
    assert out.dtype == img.dtype


def test_shear_expands_width(line):
    out = warp_affine(line, affine_matrix(0, 20, 1))
    assert out.shape[1] > line.shape[1]


def test_probability_zero_never_augments(line):
    spec = AugmentSpec(probability=0.0)
    np.testing.assert_array_equal(augment.apply(line, spec, 1), line)


def test_degenerate_scale_falls_back(caplog):
    spec = AugmentSpec(scale_range=(-1000.0, 1e-12))
    with caplog.at_level(logging.WARNING):
        params = augment.sample_affine(spec, np.random.default_rng(0))
    assert params["scale"] == 1.0 and "positive scale" in caplog.text


@pytest.mark.parametrize("kwargs", [
    {"kind": "elastic"}, {"rotation_deg": float("inf")}, {"grid_px": 1}, {"scale_range": (1.2, 1.1)},
    {"probability": 1.5}, {"sigma_px": -1.0},
])
def test_spec_validation(kwargs):
    with pytest.raises(ValueError):
        AugmentSpec(**kwargs)


def test_empty_image_rejected():
    with pytest.raises(ValueError):
        augment.affine(np.ones((0, 5)), AugmentSpec(), 0)
