"""Attack operators: blur, noise, brightness, typography, patches.

The blur tests validate against an independent dense 2-D convolution (the
implementation is separable, so the two routes share nothing but the
kernel).  Typography tests rely on the fixed-width font's exactly
predictable footprints.
"""

import math

import numpy as np
import pytest

from pvep.font5x7 import FONT, GLYPH_ADVANCE, text_width
from pvep.imgcore import SeededRng, new_image
from pvep.perturb import (
    BlurParams,
    BrightnessParams,
    NoiseParams,
    PatchSpec,
    TypoSpec,
    add_gaussian_noise,
    adjust_brightness,
    apply_patch,
    blur,
    gaussian_kernel,
    read_patch,
    render_typography,
    resolve_placement,
    write_patch,
)


def _random_image(seed: int, h: int = 16, w: int = 16) -> np.ndarray:
    return SeededRng(seed).uniform(0.0, 1.0, size=(h, w, 3))


# ---------------------------------------------------------------------------
# Blur
# ---------------------------------------------------------------------------


def test_blur_params_validation():
    with pytest.raises(ValueError):
        BlurParams(0)
    with pytest.raises(ValueError):
        BlurParams(-2)
    p = BlurParams(4)
    assert p.sigma == 4.0
    assert p.kernel_halfwidth == 12  # ceil(3 * sigma)


@pytest.mark.parametrize("radius", [1, 2, 4, 6])
def test_kernel_sums_to_one(radius):
    k = gaussian_kernel(BlurParams(radius))
    assert abs(k.sum() - 1.0) <= 1e-6
    assert np.all(k >= 0.0)
    hw = BlurParams(radius).kernel_halfwidth
    assert k.shape == (2 * hw + 1, 2 * hw + 1)


def test_kernel_weight_ratio_oracle():
    # adjacent 1-D weights must satisfy w(0)/w(1) = exp(1 / (2 sigma^2)):
    # renormalization cancels in the ratio, so this checks the density itself
    p = BlurParams(2)
    k = gaussian_kernel(p)
    hw = p.kernel_halfwidth
    center_row = k[hw]
    expected = math.exp(1.0 / (2.0 * p.sigma**2))
    assert center_row[hw] / center_row[hw + 1] == pytest.approx(expected, rel=1e-12)


def test_kernel_symmetry():
    k = gaussian_kernel(BlurParams(3))
    assert np.array_equal(k, k[::-1])
    assert np.array_equal(k, k[:, ::-1])
    assert np.array_equal(k, k.T)


@pytest.mark.parametrize("radius", [2, 4, 6])
def test_blur_matches_dense_convolution_oracle(radius):
    img = _random_image(21)
    p = BlurParams(radius)
    k2 = gaussian_kernel(p)
    hw = p.kernel_halfwidth
    padded = np.pad(img, ((hw, hw), (hw, hw), (0, 0)), mode="edge")
    dense = np.empty_like(img)
    for r in range(img.shape[0]):
        for c in range(img.shape[1]):
            win = padded[r : r + 2 * hw + 1, c : c + 2 * hw + 1]
            dense[r, c] = np.tensordot(k2, win, axes=([0, 1], [0, 1]))
    np.testing.assert_allclose(blur(img, p), np.clip(dense, 0.0, 1.0), atol=1e-12)


@pytest.mark.parametrize("radius", [1, 2, 4, 6])
@pytest.mark.parametrize("value", [0.0, 0.5, 0.7, 1.0 / 3.0, 1.0])
def test_blur_constant_image_bit_stable(radius, value):
    img = np.full((32, 32, 3), value)
    assert np.array_equal(blur(img, BlurParams(radius)), img)


def test_blur_single_white_pixel_center_weight():
    # blurring a lone white pixel reads the kernel back out of the image
    img = np.zeros((31, 31, 3))
    img[15, 15] = 1.0
    p = BlurParams(2)
    out = blur(img, p)
    k = gaussian_kernel(p)
    hw = p.kernel_halfwidth
    assert out[15, 15, 0] == pytest.approx(k[hw, hw], abs=1e-12)
    assert out[15, 16, 1] == pytest.approx(k[hw, hw + 1], abs=1e-12)


def test_blur_linearity_of_convex_combinations():
    x = _random_image(22)
    y = _random_image(23)
    p = BlurParams(2)
    a, b = 0.3, 0.7
    lhs = blur(a * x + b * y, p)
    rhs = a * blur(x, p) + b * blur(y, p)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_blur_variance_non_increasing_in_radius():
    img = _random_image(24, 32, 32)
    variances = [img.var()] + [img_v.var() for img_v in (blur(img, BlurParams(r)) for r in (2, 4, 6))]
    for lo, hi in zip(variances[1:], variances):
        assert lo <= hi + 1e-15


def test_blur_output_in_range():
    img = _random_image(25)
    out = blur(img, BlurParams(6))
    assert out.min() >= 0.0 and out.max() <= 1.0


# ---------------------------------------------------------------------------
# Noise and brightness
# ---------------------------------------------------------------------------


def test_noise_params_validation():
    with pytest.raises(ValueError):
        NoiseParams(-0.1)
    assert NoiseParams(0.0).variance == 0.0


def test_noise_zero_variance_is_identity():
    img = _random_image(30)
    out = add_gaussian_noise(img, NoiseParams(0.0), SeededRng(1))
    assert np.array_equal(out, img)


def test_noise_unbiased_mean_within_3_sigma():
    # mid-gray keeps the clamp asleep, so the sample mean estimates mu
    img = np.full((256, 256, 3), 0.5)
    params = NoiseParams(0.01)
    out = add_gaussian_noise(img, params, SeededRng(31))
    n = img.size
    bound = 3.0 * math.sqrt(params.variance / n)
    assert abs((out - img).mean()) <= bound


def test_noise_output_clamped():
    img = _random_image(32)
    out = add_gaussian_noise(img, NoiseParams(0.5), SeededRng(33))
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_noise_is_seed_deterministic():
    img = _random_image(34)
    a = add_gaussian_noise(img, NoiseParams(0.05), SeededRng(7))
    b = add_gaussian_noise(img, NoiseParams(0.05), SeededRng(7))
    assert np.array_equal(a, b)


def test_brightness_params_validation():
    with pytest.raises(ValueError):
        BrightnessParams(-0.1)
    with pytest.raises(ValueError):
        BrightnessParams(2.5)


def test_brightness_identity_at_alpha_one():
    img = _random_image(35)
    assert np.array_equal(adjust_brightness(img, BrightnessParams(1.0)), img)


def test_brightness_scales_and_clamps():
    img = np.full((4, 4, 3), 0.5)
    np.testing.assert_allclose(adjust_brightness(img, BrightnessParams(0.4)), 0.2)
    np.testing.assert_allclose(adjust_brightness(img, BrightnessParams(1.2)), 0.6)
    bright = np.full((4, 4, 3), 0.9)
    assert np.all(adjust_brightness(bright, BrightnessParams(1.6)) == 1.0)
    assert np.all(adjust_brightness(img, BrightnessParams(0.0)) == 0.0)


# ---------------------------------------------------------------------------
# Typography
# ---------------------------------------------------------------------------


def test_typo_spec_validation():
    with pytest.raises(ValueError):
        TypoSpec("")
    with pytest.raises(ValueError):
        TypoSpec("ok", scale=0)
    with pytest.raises(ValueError, match="'@'"):
        TypoSpec("a@b")
    with pytest.raises(ValueError):
        TypoSpec("ok", color=(0.5, 1.2, 0.0))


def test_typography_reproduces_glyph_bitmap():
    # a single "8" drawn on black reproduces the font bitmap exactly
    img = new_image(9, 7, 0.0)
    spec = TypoSpec("8", anchor=(1, 1), color=(1.0, 1.0, 1.0))
    out = render_typography(img, spec)
    for gr, row in enumerate(FONT["8"]):
        for gc, mark in enumerate(row):
            expected = 1.0 if mark == "#" else 0.0
            assert np.all(out[1 + gr, 1 + gc] == expected), (gr, gc)


def test_typography_touches_only_its_footprint():
    img = _random_image(40, 32, 32)
    spec = TypoSpec("stop moving", anchor=(1, 1))
    out = render_typography(img, spec)
    w = text_width("stop moving")
    footprint = np.zeros((32, 32), dtype=bool)
    footprint[1:8, 1 : 1 + w] = True
    assert np.array_equal(out[~footprint], img[~footprint])
    assert not np.array_equal(out, img)


def test_typography_width_oracle():
    # 11 glyphs advance 6 columns each, minus the trailing 1-px gap
    assert text_width("stop moving") == 11 * GLYPH_ADVANCE - 1 == 65


def test_typography_clips_at_borders():
    img = new_image(32, 32, 0.5)
    spec = TypoSpec("88", anchor=(28, 29), color=(0.0, 0.0, 0.0))
    out = render_typography(img, spec)
    # clipped, never wrapped: nothing outside the lower-right quadrant moves
    assert np.array_equal(out[:28], img[:28])
    assert np.array_equal(out[:, :29], img[:, :29])
    assert not np.array_equal(out, img)


def test_typography_scale_two_doubles_pixels():
    img = new_image(20, 16, 0.0)
    out1 = render_typography(img, TypoSpec("1", anchor=(2, 2), color=(1.0, 1.0, 1.0)))
    out2 = render_typography(img, TypoSpec("1", anchor=(2, 2), scale=2, color=(1.0, 1.0, 1.0)))
    assert np.sum(out2 == 1.0) == 4 * np.sum(out1 == 1.0)


def test_typography_overwrites_not_blends():
    img = new_image(10, 10, 1.0)
    out = render_typography(img, TypoSpec(".", anchor=(1, 1), color=(0.25, 0.5, 0.75)))
    changed = np.argwhere((out != img).any(axis=2))
    assert len(changed) > 0
    for r, c in changed:
        assert np.array_equal(out[r, c], [0.25, 0.5, 0.75])


# ---------------------------------------------------------------------------
# Patches
# ---------------------------------------------------------------------------


def test_patch_spec_validation():
    with pytest.raises(ValueError):
        PatchSpec(delta=np.zeros((6, 5, 3)))
    with pytest.raises(ValueError):
        PatchSpec(delta=np.zeros((6, 6, 2)))
    with pytest.raises(ValueError):
        PatchSpec(delta=np.full((6, 6, 3), 1.5))
    bad = np.zeros((6, 6, 3), dtype=np.float32)
    bad[0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        PatchSpec(delta=bad)
    spec = PatchSpec(delta=np.full((4, 4, 3), 0.5))
    assert spec.side_px == 4
    assert spec.delta.dtype == np.float32


def test_apply_patch_matches_dense_oracle_100_instances():
    # independent oracle: loop every pixel, overwrite inside the footprint
    rng = SeededRng(50)
    for _ in range(100):
        h = int(rng.integers(8, 33))
        w = int(rng.integers(8, 33))
        p = int(rng.integers(1, 7))
        img = rng.uniform(0.0, 1.0, size=(h, w, 3))
        delta = rng.uniform(0.0, 1.0, size=(p, p, 3)).astype(np.float32)
        r0 = int(rng.integers(0, h - p + 1))
        c0 = int(rng.integers(0, w - p + 1))
        patch = PatchSpec(delta=delta, placement=(r0, c0))
        got, placement = apply_patch(img, patch)
        assert placement == (r0, c0)
        expect = np.empty_like(img)
        for r in range(h):
            for c in range(w):
                inside = r0 <= r < r0 + p and c0 <= c < c0 + p
                expect[r, c] = delta[r - r0, c - c0] if inside else img[r, c]
        assert np.array_equal(got, expect)


def test_apply_patch_randomized_placement_in_bounds():
    img = _random_image(51, 32, 32)
    patch = PatchSpec(delta=np.full((6, 6, 3), 0.9))
    rng = SeededRng(52)
    seen = set()
    for _ in range(50):
        out, (r, c) = apply_patch(img, patch, rng)
        assert 0 <= r <= 26 and 0 <= c <= 26
        assert np.all(out[r : r + 6, c : c + 6] == np.float32(0.9))
        seen.add((r, c))
    assert len(seen) > 1  # placements actually vary


def test_apply_patch_idempotent_at_fixed_placement():
    img = _random_image(53, 16, 16)
    patch = PatchSpec(delta=SeededRng(54).uniform(size=(5, 5, 3)), placement=(3, 4))
    once, _ = apply_patch(img, patch)
    twice, _ = apply_patch(once, patch)
    assert np.array_equal(once, twice)


def test_resolve_placement_errors():
    patch = PatchSpec(delta=np.zeros((6, 6, 3)))
    with pytest.raises(ValueError, match="rng"):
        resolve_placement(patch, 32, 32, None)
    big = PatchSpec(delta=np.zeros((40, 40, 3)))
    with pytest.raises(ValueError, match="exceeds"):
        resolve_placement(big, 32, 32, SeededRng(0))
    pinned = PatchSpec(delta=np.zeros((6, 6, 3)), placement=(30, 0))
    with pytest.raises(ValueError, match="outside"):
        resolve_placement(pinned, 32, 32, None)


def test_patch_file_round_trip_bit_exact(tmp_path):
    delta = SeededRng(55).uniform(0.0, 1.0, size=(6, 6, 3)).astype(np.float32)
    patch = PatchSpec(delta=delta)
    path = tmp_path / "p.ppat"
    write_patch(patch, path)
    back = read_patch(path)
    assert np.array_equal(back.delta, delta)
    assert back.side_px == 6
    assert back.placement is None


def test_patch_file_layout(tmp_path):
    patch = PatchSpec(delta=np.zeros((2, 2, 3), dtype=np.float32))
    path = tmp_path / "q.ppat"
    write_patch(patch, path)
    data = path.read_bytes()
    assert data[:8] == b"PVEPPAT1"
    assert len(data) == 8 + 4 + 2 * 2 * 3 * 4


def test_read_patch_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.ppat"
    path.write_bytes(b"NOTAPATCH" + b"\x00" * 40)
    with pytest.raises(ValueError, match="PVEPPAT1"):
        read_patch(path)


def test_read_patch_rejects_short_payload(tmp_path):
    path = tmp_path / "short.ppat"
    path.write_bytes(b"PVEPPAT1" + (6).to_bytes(4, "little") + b"\x00" * 10)
    with pytest.raises(ValueError, match="payload length"):
        read_patch(path)
