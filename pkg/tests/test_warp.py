import math

import numpy as np
import pytest

from warpcore.errors import ShapeMismatch
from warpcore.warp import (
    WINDOW,
    compute_mask,
    keys_cubic,
    resample_geometry,
    round_half_away,
    spline_weights,
    warp_adaptive_fixed,
    warp_bicubic,
    warp_with_kernels,
)
from warpcore.xform import Homography, backward_map, identity, scale_matrix, translation

from conftest import random_homography


class TestKernelHelpers:
    def test_keys_cubic_cardinal(self):
        # interpolating kernel: 1 at 0, 0 at other integers
        assert keys_cubic(0.0) == 1.0
        for t in (-2, -1, 1, 2, 3):
            assert keys_cubic(float(t)) == 0.0

    def test_keys_partition_of_unity(self):
        for f in np.linspace(0, 1, 23):
            s = sum(keys_cubic(f - i) for i in (-1, 0, 1, 2))
            assert s == pytest.approx(1.0, abs=1e-12)

    def test_round_half_away(self):
        assert round_half_away(0.5) == 1.0
        assert round_half_away(-0.5) == -1.0
        assert round_half_away(2.49) == 2.0
        assert round_half_away(-2.5) == -3.0
        assert round_half_away(0.0) == 0.0


class TestComputeMask:
    def test_identity_all_ones(self):
        m = compute_mask(backward_map(identity()), (8, 6), (8, 6))
        assert m.shape == (6, 8) and m.all()

    def test_translation_outside_all_zero(self):
        m = compute_mask(backward_map(translation(16, 0)), (16, 16), (16, 16))
        assert not m.any()

    def test_scale_two_exhaustive_oracle(self):
        h = scale_matrix(2, 2)
        m = compute_mask(backward_map(h), (16, 16), (32, 32))
        inv = h.m_inv
        for y in range(32):
            for x in range(32):
                sx = inv[0, 0] * x + inv[0, 2]
                sy = inv[1, 1] * y + inv[1, 2]
                expected = int(0 <= sx <= 15 and 0 <= sy <= 15)
                assert m[y, x] == expected

    def test_random_homography_oracle(self, rng):
        h = Homography(random_homography(rng))
        m = compute_mask(backward_map(h), (12, 10), (20, 18))
        inv = h.m_inv
        for y in range(18):
            for x in range(20):
                d = inv[2, 0] * x + inv[2, 1] * y + inv[2, 2]
                sx = (inv[0, 0] * x + inv[0, 1] * y + inv[0, 2]) / d
                sy = (inv[1, 0] * x + inv[1, 1] * y + inv[1, 2]) / d
                assert m[y, x] == int(0 <= sx <= 11 and 0 <= sy <= 9)


def scalar_bicubic_oracle(img, m_inv, dst_wh):
    """Independent per-pixel reimplementation of the 4x4 cubic warp."""
    src_h, src_w, nc = img.shape
    dst_w, dst_h = dst_wh
    out = np.zeros((dst_h, dst_w, nc))

    def k(t):
        t = abs(t)
        if t <= 1:
            return (1.5 * t - 2.5) * t * t + 1.0
        if t < 2:
            return -0.5 * (((t - 5.0) * t + 8.0) * t - 4.0)
        return 0.0

    for y in range(dst_h):
        for x in range(dst_w):
            d = m_inv[2, 0] * x + m_inv[2, 1] * y + m_inv[2, 2]
            sx = (m_inv[0, 0] * x + m_inv[0, 1] * y + m_inv[0, 2]) / d
            sy = (m_inv[1, 0] * x + m_inv[1, 1] * y + m_inv[1, 2]) / d
            if not (0 <= sx <= src_w - 1 and 0 <= sy <= src_h - 1):
                continue
            fx, fy = math.floor(sx), math.floor(sy)
            for c in range(nc):
                acc = 0.0
                for j in (-1, 0, 1, 2):
                    for i in (-1, 0, 1, 2):
                        tx = min(max(fx + i, 0), src_w - 1)
                        ty = min(max(fy + j, 0), src_h - 1)
                        acc += k(sx - (fx + i)) * k(sy - (fy + j)) * img[ty, tx, c]
                out[y, x, c] = acc
    return out


def reference_separable_resize(img, s):
    """Two-pass 1D cubic-convolution resize with the same alignment."""
    src_h, src_w, nc = img.shape
    dst_h, dst_w = round(src_h * s), round(src_w * s)

    def pass_1d(data, n_src, n_dst):
        # data: (n_src, ...) resized along axis 0
        pos = (np.arange(n_dst) - 0.5 * (s - 1)) / s
        f = np.floor(pos).astype(int)
        out = np.zeros((n_dst,) + data.shape[1:])
        for i in (-1, 0, 1, 2):
            taps = np.clip(f + i, 0, n_src - 1)
            w = keys_cubic(pos - (f + i))
            out += w.reshape((-1,) + (1,) * (data.ndim - 1)) * data[taps]
        return out

    tmp = pass_1d(img, src_h, dst_h)
    return pass_1d(tmp.transpose(1, 0, 2), src_w, dst_w).transpose(1, 0, 2)


class TestWarpBicubic:
    def test_identity_exact(self, rng):
        img = rng.random((9, 7, 3))
        out, mask = warp_bicubic(img, backward_map(identity()), (7, 9))
        assert np.array_equal(out, img)
        assert mask.all()

    def test_constant_partition_of_unity(self):
        img = np.full((8, 8, 3), 0.37)
        out, mask = warp_bicubic(img, backward_map(scale_matrix(2, 2)), (16, 16))
        assert np.abs(out[mask == 1] - 0.37).max() < 1e-9

    def test_scalar_oracle_anisotropic(self, rng):
        img = rng.random((32, 32, 3))
        h = scale_matrix(1.7, 1.3)
        out, mask = warp_bicubic(img, backward_map(h), (54, 41))
        ref = scalar_bicubic_oracle(img, h.m_inv, (54, 41))
        assert np.abs(out - ref).max() < 1e-6

    def test_scalar_oracle_projective(self, rng):
        img = rng.random((16, 16, 2))
        m = random_homography(rng)
        h = Homography(m)
        out, _ = warp_bicubic(img, backward_map(h), (20, 20))
        ref = scalar_bicubic_oracle(img, h.m_inv, (20, 20))
        assert np.abs(out - ref).max() < 1e-6

    def test_reference_separable_resize(self, rng):
        # x2 upscale equals an independent separable resize at interior pixels
        for _ in range(20):
            img = rng.random((32, 32, 3))
            out, _ = warp_bicubic(img, backward_map(scale_matrix(2, 2)), (64, 64))
            ref = reference_separable_resize(img, 2.0)
            # interior: all 4x4 taps in range, no clamping on either path
            assert np.abs(out[4:-4, 4:-4] - ref[4:-4, 4:-4]).max() < 1e-6

    def test_void_pixels_zero_and_mask_consistent(self, rng):
        img = rng.random((8, 8, 3)) + 0.1
        out, mask = warp_bicubic(img, backward_map(translation(4, 0)), (8, 8))
        assert not out[mask == 0].any()

    def test_thread_invariance(self, rng):
        img = rng.random((24, 24, 3))
        h = Homography(random_homography(rng))
        a = warp_bicubic(img, backward_map(h), (30, 30), threads=1)
        b = warp_bicubic(img, backward_map(h), (30, 30), threads=8)
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])

    def test_empty_image_rejected(self):
        with pytest.raises(ShapeMismatch):
            warp_bicubic(np.zeros((0, 4, 3)), backward_map(identity()), (4, 4))


class TestWarpAdaptiveFixed:
    def test_identity_exact(self, rng):
        img = rng.random((9, 7, 3))
        out, mask = warp_adaptive_fixed(img, backward_map(identity()), (7, 9))
        assert np.array_equal(out, img)
        assert mask.all()

    def test_constant_partition_of_unity(self):
        img = np.full((8, 8, 1), 0.61)
        out, mask = warp_adaptive_fixed(img, backward_map(scale_matrix(2, 2)), (16, 16))
        assert np.abs(out[mask == 1] - 0.61).max() < 1e-9

    def test_similarity_equals_divided_offsets(self, rng):
        # similarity backward maps rescale offsets by exactly 1/s, so the
        # adaptive path must equal a direct evaluation on offsets / s
        img = rng.random((16, 16, 3))
        s = 2.0
        h = scale_matrix(s, s)
        out, mask = warp_adaptive_fixed(img, backward_map(h), (32, 32))
        geo = resample_geometry(backward_map(h), (16, 16), (32, 32))
        manual = geo.offsets.copy()
        # recompute from raw offsets: backward Jacobian is diag(1/s)
        inv = h.m_inv
        ref = np.zeros_like(out)
        flat = img.reshape(-1, 3)
        for n, tgt in enumerate(geo.valid_idx):
            y, x = divmod(int(tgt), 32)
            sx = inv[0, 0] * x + inv[0, 2]
            sy = inv[1, 1] * y + inv[1, 2]
            rcx, rcy = float(round_half_away(sx)), float(round_half_away(sy))
            w = np.zeros(9)
            for k, (i, j) in enumerate(WINDOW):
                ox = (rcx + i - sx) * (1.0 / (1.0 / s))  # offsets divided by 1/s
                oy = (rcy + j - sy) * s
                w[k] = keys_cubic(ox) * keys_cubic(oy)
            w /= w.sum()
            ref[y, x] = w @ flat[geo.tap_idx[n]]
        assert np.abs(out - ref).max() < 1e-9

    def test_anisotropic_grid_shrinks_along_minified_axis(self):
        # backward diag(2,1): offsets shrink along x, spreading weight from
        # the center to the x-neighbors relative to the regular spline grid
        h = scale_matrix(0.5, 1.0)
        geo = resample_geometry(backward_map(h), (32, 16), (16, 16))
        adaptive = spline_weights(geo.offsets)
        regular = np.zeros_like(adaptive)
        raw = np.empty_like(geo.offsets)
        inv = h.m_inv
        for n, tgt in enumerate(geo.valid_idx):
            y, x = divmod(int(tgt), 16)
            sx = inv[0, 0] * x + inv[0, 2]
            sy = inv[1, 1] * y + inv[1, 2]
            rcx, rcy = float(round_half_away(sx)), float(round_half_away(sy))
            for k, (i, j) in enumerate(WINDOW):
                raw[n, 2 * k] = rcx + i - sx
                raw[n, 2 * k + 1] = rcy + j - sy
        regular = spline_weights(raw)
        # x-neighbor taps: WINDOW entries with i = +-1, j = 0 -> flat 3*(i+1)+1
        xn = adaptive[:, [1, 7]].sum(axis=1)
        xn_reg = regular[:, [1, 7]].sum(axis=1)
        assert (xn >= xn_reg - 1e-12).all()
        assert xn.mean() > xn_reg.mean()

    def test_thread_invariance(self, rng):
        img = rng.random((16, 16, 3))
        h = Homography(random_homography(rng))
        a = warp_adaptive_fixed(img, backward_map(h), (20, 20), threads=1)
        b = warp_adaptive_fixed(img, backward_map(h), (20, 20), threads=8)
        assert np.array_equal(a[0], b[0])


class TestWarpWithKernels:
    def test_one_hot_center_is_nearest_copy(self, rng):
        feat = rng.random((6, 5, 4))
        kern = np.zeros((6, 5, 1, 3, 3))
        kern[:, :, 0, 1, 1] = 1.0
        out, mask = warp_with_kernels(feat, backward_map(identity()), kern, (5, 6))
        assert np.array_equal(out, feat)
        assert mask.all()

    def test_spline_kernels_equal_adaptive_fixed(self, rng):
        img = rng.random((12, 12, 3))
        h = scale_matrix(1.5, 1.5)
        dst = (18, 18)
        geo = resample_geometry(backward_map(h), (12, 12), dst)
        w = spline_weights(geo.offsets)
        kern = np.zeros((18, 18, 1, 3, 3))
        kern.reshape(-1, 1, 9)[geo.valid_idx, 0] = w
        a, _ = warp_with_kernels(img, backward_map(h), kern, dst)
        b, _ = warp_adaptive_fixed(img, backward_map(h), dst)
        assert np.abs(a - b).max() < 1e-12

    def test_linearity_in_features(self, rng):
        h = scale_matrix(1.5, 1.5)
        dst = (12, 12)
        kern = rng.standard_normal((12, 12, 3, 3, 3))
        f1 = rng.random((8, 8, 3))
        f2 = rng.random((8, 8, 3))
        al, be = 0.7, -1.3
        lhs, _ = warp_with_kernels(al * f1 + be * f2, backward_map(h), kern, dst)
        a, _ = warp_with_kernels(f1, backward_map(h), kern, dst)
        b, _ = warp_with_kernels(f2, backward_map(h), kern, dst)
        assert np.abs(lhs - (al * a + be * b)).max() < 1e-9

    def test_depthwise_channels_independent(self, rng):
        feat = rng.random((6, 6, 2))
        kern = np.zeros((6, 6, 2, 3, 3))
        kern[:, :, 0, 1, 1] = 1.0  # channel 0: center copy, channel 1: zero
        out, _ = warp_with_kernels(feat, backward_map(identity()), kern, (6, 6))
        assert np.array_equal(out[:, :, 0], feat[:, :, 0])
        assert not out[:, :, 1].any()

    def test_shape_mismatch(self, rng):
        feat = rng.random((6, 6, 3))
        with pytest.raises(ShapeMismatch):
            warp_with_kernels(feat, backward_map(identity()), np.zeros((6, 6, 2, 3, 3)), (6, 6))
        with pytest.raises(ShapeMismatch):
            warp_with_kernels(feat, backward_map(identity()), np.zeros((5, 6, 1, 3, 3)), (6, 6))


class TestResampleGeometry:
    def test_window_order_matches_layout(self):
        assert WINDOW[0] == (-1, -1) and WINDOW[4] == (0, 0) and WINDOW[8] == (1, 1)

    def test_taps_clamped_in_range(self, rng):
        h = Homography(random_homography(rng))
        geo = resample_geometry(backward_map(h), (10, 8), (14, 14))
        assert geo.tap_idx.min() >= 0 and geo.tap_idx.max() < 80

    def test_mask_excludes_void(self):
        geo = resample_geometry(backward_map(translation(100, 0)), (8, 8), (8, 8))
        assert geo.valid_idx.size == 0 and not geo.mask.any()

    def test_spline_weights_sum_to_one(self, rng):
        offs = rng.uniform(-1.2, 1.2, (50, 18))
        w = spline_weights(offs)
        assert np.abs(w.sum(axis=1) - 1.0).max() < 1e-12
