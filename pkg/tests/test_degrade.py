import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dynavsr.degrade import (DegradationError, DownsampleMode, FrameSequence, Tier, bicubic_resize,
                             blur_downsample, load_triple, make_task_triple, read_frames, save_triple,
                             write_frames)
from dynavsr.kernels import KernelSpec, delta_kernel, make_kernel
from dynavsr.resize import resize_hwc
from oracles import brute_blur, brute_blur_decimate


def seq(frames, tier=Tier.HR):
    return FrameSequence(np.asarray(frames, dtype=np.float64), tier)


def test_delta_direct_is_plain_decimation():
    x = np.random.default_rng(0).random((2, 16, 16, 3))
    out = blur_downsample(seq(x), delta_kernel(), 2, "direct")
    assert np.array_equal(out.frames, x[:, ::2, ::2])
    assert out.tier is Tier.LR


@pytest.mark.parametrize("mode", list(DownsampleMode))
def test_constant_frames_stay_constant(mode):
    k = make_kernel(KernelSpec(0.7, 1.9, 0.3))
    out = blur_downsample(seq(np.full((1, 32, 32, 3), 0.5)), k, 2, mode)
    np.testing.assert_allclose(out.frames, 0.5, atol=1e-9)


def test_ramp_matches_brute_force():
    ramp = np.add.outer(np.arange(16.0), 0.5 * np.arange(16.0)) / 24.0
    k = make_kernel(KernelSpec(1.0, 1.0, 0.0, 13))
    out = blur_downsample(seq(ramp[None, ..., None]), k, 2, "direct").frames[0, ..., 0]
    np.testing.assert_allclose(out, brute_blur_decimate(ramp, k.weights, 2), rtol=0, atol=1e-9)


def test_bicubic_mode_is_blur_then_resize():
    x = np.random.default_rng(1).random((1, 16, 20, 1))
    k = make_kernel(KernelSpec(1.2, 0.6, 1.0, 7))
    out = blur_downsample(seq(x), k, 2, "bicubic_after_blur").frames[0, ..., 0]
    expected = resize_hwc(brute_blur(x[0, ..., 0], k.weights)[..., None], 0.5)[..., 0]
    np.testing.assert_allclose(out, expected, atol=1e-12)


def test_slr_is_two_brute_force_passes():
    hr = np.random.default_rng(2).random((32, 32))
    k = make_kernel(KernelSpec(1.2, 1.2, 0.0, 13))
    t = make_task_triple(seq(hr[None, ..., None]), k, 2, "direct")
    expected = brute_blur_decimate(brute_blur_decimate(hr, k.weights, 2), k.weights, 2)
    np.testing.assert_allclose(t.slr.frames[0, ..., 0], expected, atol=1e-9)


def test_triple_shapes_and_metadata():
    t = make_task_triple(seq(np.zeros((5, 64, 64, 3))), make_kernel(KernelSpec(1, 1)), 2, "bicubic_after_blur")
    assert t.lr.frames.shape == (5, 32, 32, 3)
    assert t.slr.frames.shape == (5, 16, 16, 3)
    assert (t.lr.tier, t.slr.tier) == (Tier.LR, Tier.SLR)
    assert t.downsample_mode is DownsampleMode.BICUBIC_AFTER_BLUR


def test_delta_triple_composes_decimations():
    hr = np.random.default_rng(3).random((1, 32, 32, 3))
    t = make_task_triple(seq(hr), delta_kernel(), 2, "direct")
    assert np.array_equal(t.slr.frames, hr[:, ::4, ::4])


@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2**31))
@settings(max_examples=30)
def test_linearity(a, b, s):
    rng = np.random.default_rng(s)
    x, y = rng.random((1, 16, 16, 2)), rng.random((1, 16, 16, 2))
    k = make_kernel(KernelSpec(*rng.uniform(0.2, 2.0, 2), rng.uniform(-3, 3), 7))
    for mode in DownsampleMode:
        lhs = blur_downsample(seq(a * x + b * y), k, 2, mode).frames
        rhs = a * blur_downsample(seq(x), k, 2, mode).frames + b * blur_downsample(seq(y), k, 2, mode).frames
        np.testing.assert_allclose(lhs, rhs, atol=1e-9)


def test_mean_preserved_on_large_frames():
    x = np.random.default_rng(4).random((1, 256, 256, 1))
    k = make_kernel(KernelSpec(1.5, 0.7, 0.4))
    out = blur_downsample(seq(x), k, 2, "direct").frames
    assert abs(out.mean() - x.mean()) < 1e-3


def test_two_direct_passes_equal_one_composed_kernel_in_interior():
    rng = np.random.default_rng(5)
    x = rng.random((64, 64))
    kern = make_kernel(KernelSpec(1.3, 0.6, 0.9, 7))
    k, s = kern.weights, 2
    # (k upsampled by s) convolved with k: a kernel of side s*(K-1)+K
    up = np.zeros((s * 6 + 1, s * 6 + 1))
    up[::s, ::s] = k
    combined = np.zeros((up.shape[0] + 6, up.shape[1] + 6))
    for i in range(7):
        for j in range(7):
            combined[i:i + up.shape[0], j:j + up.shape[1]] += k[i, j] * up
    r = combined.shape[0] // 2
    twice = blur_downsample(blur_downsample(seq(x[None, ..., None]), kern, s), kern, s).frames[0, ..., 0]
    flipped = combined[::-1, ::-1]
    checked = 0
    for i in range(twice.shape[0]):
        for j in range(twice.shape[1]):
            y, xx = s * s * i, s * s * j
            if y - r < 0 or xx - r < 0 or y + r >= 64 or xx + r >= 64:
                continue
            direct = np.sum(flipped * x[y - r:y + r + 1, xx - r:xx + r + 1])
            assert abs(direct - twice[i, j]) < 1e-6
            checked += 1
    assert checked > 0


def test_errors():
    k = make_kernel(KernelSpec(1, 1, 0, 13))
    with pytest.raises(DegradationError):
        blur_downsample(seq(np.zeros((1, 15, 16, 1))), k, 2)
    with pytest.raises(DegradationError, match="larger"):
        blur_downsample(seq(np.zeros((1, 8, 8, 1))), k, 2)
    with pytest.raises(DegradationError):
        make_task_triple(seq(np.zeros((1, 18, 18, 1))), make_kernel(KernelSpec(1, 1, 0, 3)), 2)
    with pytest.raises(ValueError):
        bicubic_resize(seq(np.zeros((1, 7, 8, 1))), 0.5)


def test_bicubic_resize_identity_and_constant():
    x = np.random.default_rng(6).random((2, 8, 8, 3))
    assert np.array_equal(bicubic_resize(seq(x), 1).frames, x)
    np.testing.assert_allclose(bicubic_resize(seq(np.full((1, 8, 8, 3), 0.3)), 0.5).frames, 0.3, atol=1e-9)


def test_frame_and_triple_round_trip(tmp_path):
    hr = np.round(np.random.default_rng(7).random((3, 16, 16, 3)) * 255) / 255
    write_frames(hr, tmp_path / "f")
    assert sorted(p.name for p in (tmp_path / "f").iterdir()) == ["00000000.png", "00000001.png", "00000002.png"]
    np.testing.assert_array_equal(read_frames(tmp_path / "f"), hr)
    t = make_task_triple(seq(hr), make_kernel(KernelSpec(1, 1, 0, 3)), 2, "bicubic_after_blur")
    save_triple(t, tmp_path / "t")
    back = load_triple(tmp_path / "t")
    assert back.kernel == t.kernel
    assert back.downsample_mode is DownsampleMode.BICUBIC_AFTER_BLUR
    assert back.slr.frames.shape == (3, 4, 4, 3)
    assert np.abs(back.lr.frames - t.lr.frames).max() <= 0.5 / 255 + 1e-12
