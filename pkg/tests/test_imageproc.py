import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wordocr import imageproc as I


def naive_bilinear(image, height, width):
    """Per-pixel reference resampler with half-pixel centers and edge clamping."""
    h, w = image.shape
    out = np.empty((height, width))
    for r in range(height):
        y = min(max((r + 0.5) * h / height - 0.5, 0.0), h - 1)
        y0 = int(math.floor(y))
        y1 = min(y0 + 1, h - 1)
        fy = y - y0
        for c in range(width):
            x = min(max((c + 0.5) * w / width - 0.5, 0.0), w - 1)
            x0 = int(math.floor(x))
            x1 = min(x0 + 1, w - 1)
            fx = x - x0
            top = image[y0, x0] * (1 - fx) + image[y0, x1] * fx
            bottom = image[y1, x0] * (1 - fx) + image[y1, x1] * fx
            out[r, c] = top * (1 - fy) + bottom * fy
    return out


@pytest.fixture
def word():
    rng = np.random.default_rng(0)
    img = np.full((40, 120), 255.0)
    img[10:30, 15:105] = rng.integers(0, 256, size=(20, 90))
    return img


def test_resize_same_grid_is_identity():
    img = np.random.default_rng(1).integers(0, 256, size=(50, 200)).astype(float)
    np.testing.assert_allclose(I.resize_to_canvas(img), img, atol=1e-12)


def test_resize_constant():
    out = I.resize_to_canvas(np.full((25, 100), 77.0))
    assert out.shape == (50, 200)
    np.testing.assert_allclose(out, 77.0, atol=1e-12)


def test_resize_checkerboard_matches_naive_resampler():
    yy, xx = np.indices((100, 400))
    board = np.where((yy // 3 + xx // 5) % 2, 255.0, 0.0)
    assert np.abs(I.resize_to_canvas(board) - naive_bilinear(board, 50, 200)).max() <= 1.0


def test_resize_upsample_matches_naive_resampler():
    img = np.random.default_rng(2).integers(0, 256, size=(13, 37)).astype(float)
    np.testing.assert_allclose(I.resize(img, 50, 200), naive_bilinear(img, 50, 200), atol=1e-9)


def test_resize_rejects_empty():
    with pytest.raises(ValueError):
        I.resize_to_canvas(np.zeros((0, 5)))


def test_normalize_fixed_points():
    out = I.normalize(np.array([0.0, 127.5, 255.0]))
    assert out.tolist() == [-1.0, 0.0, 1.0]


def test_normalize_round_trip_integers():
    # adding 1 back to values near -1 drops low bits, so exact equality is
    # out of reach in doubles; the error stays a few ulps and rounding recovers x
    x = np.arange(256, dtype=np.float64)
    back = 127.5 * (I.normalize(x) + 1.0)
    assert np.abs(back - x).max() < 1e-13
    assert np.array_equal(np.rint(back), x)
    exact = [0.0, 127.5, 255.0]
    assert np.array_equal(127.5 * (I.normalize(exact) + 1.0), exact)


def test_preprocess_shape_and_range(word):
    out = I.preprocess(word)
    assert out.shape == (50, 200)
    assert out.min() >= -1.0 and out.max() <= 1.0


def test_cutout_zero_boxes_identity(word):
    assert np.array_equal(I.cutout(word, "horizontal", count=(0, 0), seed=0), word)


def test_cutout_full_box_blackens_everything(word):
    assert np.all(I.cutout(word, "vertical", count=(1, 1), frac=(1.0, 1.0), seed=3) == 0)


@pytest.mark.parametrize("orientation", ["horizontal", "vertical"])
def test_cutout_only_touches_full_bands(orientation, word):
    out = I.cutout(word, orientation, seed=11)
    changed = out != word
    assert np.all(out[changed] == 0)
    zero_lines = np.all(out == 0, axis=1 if orientation == "horizontal" else 0)
    assert zero_lines.any()
    # untouched lines stay bit-identical
    keep = ~zero_lines
    if orientation == "horizontal":
        assert np.array_equal(out[keep], word[keep])
    else:
        assert np.array_equal(out[:, keep], word[:, keep])


def test_cutout_deterministic(word):
    assert np.array_equal(I.cutout(word, seed=5), I.cutout(word, seed=5))


def test_gaussian_noise_properties(word):
    assert np.array_equal(I.gaussian_noise(word, 0.0, seed=1), word)
    flat = np.full((50, 200), 128.0)
    out = I.gaussian_noise(flat, 10.0, seed=0)
    assert abs((out - flat).mean()) <= 0.5
    noisy = I.gaussian_noise(word, 80.0, seed=2)
    assert noisy.min() >= 0 and noisy.max() <= 255
    assert np.array_equal(noisy, I.gaussian_noise(word, 80.0, seed=2))
    with pytest.raises(ValueError):
        I.gaussian_noise(word, -1.0)


def test_shift_scale_rotate_identity(word):
    np.testing.assert_allclose(I.shift_scale_rotate(word), word, atol=1e-12)


def test_full_turn_is_identity_within_one_level(word):
    assert np.abs(I.shift_scale_rotate(word, angle=360.0) - word).max() <= 1.0


def test_integer_shift_moves_pixels(word):
    out = I.shift_scale_rotate(word, shift=(0.0, 10 / 120))
    np.testing.assert_allclose(out[:, 10:], word[:, :-10], atol=1e-9)
    assert np.all(out[:, :10] == 255)


@pytest.mark.parametrize("params", [dict(shift=(0.1, -0.2)), dict(scale=0.7), dict(angle=33.0),
                                    dict(shift=0.05, scale=1.3, angle=-170.0)])
def test_white_image_stays_white_under_affine(params):
    white = np.full((30, 90), 255.0)
    np.testing.assert_allclose(I.shift_scale_rotate(white, **params), 255.0, atol=1e-9)


@pytest.mark.parametrize("warp", [
    lambda im: I.optical_distortion(im, 0.05),
    lambda im: I.optical_distortion(im, -0.05),
    lambda im: I.grid_distortion(im, 4, 8.0, seed=1),
    lambda im: I.affine_jitter(im, 25, 3.0, seed=1),
])
def test_warps_keep_white_image_white(warp):
    white = np.full((40, 120), 255.0)
    out = warp(white)
    assert out.shape == white.shape
    np.testing.assert_allclose(out, 255.0, atol=1e-9)


def test_null_warps_are_identity(word):
    for out in (I.optical_distortion(word, 0.0), I.grid_distortion(word, magnitude=0.0, seed=0),
                I.affine_jitter(word, sigma=0.0, seed=0)):
        assert np.array_equal(out, word)


@pytest.mark.parametrize("name, field", [
    ("optical", lambda shape, seed: I.optical_field(shape, 0.05)),
    ("grid", lambda shape, seed: I.grid_field(shape, 4, 8.0, seed)),
    ("jitter", lambda shape, seed: I.jitter_field(shape, 25, 3.0, seed)),
])
def test_sampling_stays_within_field_radius(name, field, monkeypatch):
    shape = (40, 120)
    dy, dx = field(shape, 7)
    m = float(np.sqrt(dy ** 2 + dx ** 2).max())
    seen = {}
    real = I.remap

    def spy(image, rows, cols):
        seen["rows"], seen["cols"] = rows, cols
        return real(image, rows, cols)

    monkeypatch.setattr(I, "remap", spy)
    img = np.zeros(shape)
    if name == "optical":
        I.optical_distortion(img, 0.05)
    elif name == "grid":
        I.grid_distortion(img, 4, 8.0, seed=7)
    else:
        I.affine_jitter(img, 25, 3.0, seed=7)
    yy, xx = np.indices(shape)
    cheb = np.maximum(np.abs(seen["rows"] - yy), np.abs(seen["cols"] - xx))
    assert cheb.max() <= math.ceil(m) + 1


def test_jitter_field_is_clipped():
    dy, dx = I.jitter_field((50, 200), 25, 2.0, seed=0)
    assert np.abs(dy).max() <= 6.0 and np.abs(dx).max() <= 6.0


def test_policy_validation():
    with pytest.raises(ValueError):
        I.AugmentPolicy("blur")
    with pytest.raises(ValueError):
        I.AugmentPolicy("cutout_h", probability=1.5)
    with pytest.raises(ValueError):
        I.AugmentPolicy("shift_scale_rotate", {"angle": 400.0})
    assert I.AugmentPolicy("gaussian_noise").params == {"sigma": [5.0, 15.0]}


def test_compose_identities(word):
    assert np.array_equal(I.compose_augmentations([], word, seed=0), word)
    silent = I.default_policies(probability=0.0)
    assert np.array_equal(I.compose_augmentations(silent, word, seed=0), word)
    np.testing.assert_allclose(I.compose_augmentations(I.identity_policies(), word, seed=0),
                               word, atol=1e-9)


def test_compose_deterministic_and_seed_sensitive(word):
    pols = I.default_policies(probability=1.0)
    a = I.compose_augmentations(pols, word, seed=4)
    assert np.array_equal(a, I.compose_augmentations(pols, word, seed=4))
    assert not np.array_equal(a, I.compose_augmentations(pols, word, seed=5))
    assert a.shape == word.shape


def test_policy_file_round_trip(tmp_path):
    pols = I.default_policies(0.3)
    pols[0] = I.AugmentPolicy("cutout_h", {"count": [2, 2]}, 1.0)
    path = tmp_path / "policy.json"
    I.save_policies(pols, path)
    back = I.load_policies(path)
    assert [p.to_dict() for p in back] == [p.to_dict() for p in pols]
    path.write_text('{"kind": "cutout_h"}')
    with pytest.raises(ValueError):
        I.load_policies(path)


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(I.KINDS), st.integers(0, 2**31 - 1),
       st.integers(5, 60), st.integers(5, 120))
def test_every_policy_preserves_shape_and_range(kind, seed, h, w):
    img = np.random.default_rng(seed).integers(0, 256, size=(h, w)).astype(float)
    out = I.AugmentPolicy(kind, probability=1.0).apply(img, np.random.default_rng(seed))
    assert out.shape == img.shape
    assert out.min() >= -1e-9 and out.max() <= 255 + 1e-9
