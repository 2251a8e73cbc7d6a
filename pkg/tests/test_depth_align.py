import numpy as np
import pytest

from panosplat.depth_align import (
    AlignmentResult,
    apply_alignment,
    assign_sky_depth,
    default_sky_depth,
    estimate_alignment,
    load_alignment,
    save_alignment,
)
from panosplat.errors import DomainError
from panosplat.images import DepthMap, PixelMask


def smooth_field(h, w, amplitude, seed):
    """Low-frequency wrap-periodic field from a couple of sinusoids (the generator oracle)."""
    rng = np.random.default_rng(seed)
    yy, xx = np.meshgrid(
        np.linspace(0, 2 * np.pi, h), np.linspace(0, 2 * np.pi, w, endpoint=False), indexing="ij"
    )
    a, b = rng.integers(1, 3, 2)
    return amplitude * (np.sin(a * xx + 1.0) * 0.6 + np.cos(b * yy) * 0.4)


def room_like_depth(h, w, seed=0):
    rng = np.random.default_rng(seed)
    base = 2.0 + 1.5 * np.abs(np.sin(np.linspace(0, 4 * np.pi, w, endpoint=False)))[None, :]
    base = base + 0.8 * np.abs(np.cos(np.linspace(0, 2 * np.pi, h)))[:, None]
    return base + 0.05 * rng.standard_normal((h, w))


class TestSkyDepth:
    def test_empty_sky_is_identity(self):
        d = DepthMap(room_like_depth(16, 32))
        out = assign_sky_depth(d, PixelMask(np.zeros((16, 32), bool)), 50.0)
        assert np.array_equal(out.data, d.data)

    def test_all_sky_constant(self):
        d = DepthMap(room_like_depth(16, 32))
        out = assign_sky_depth(d, PixelMask(np.ones((16, 32), bool)), 42.0)
        assert np.all(out.data == 42.0)

    def test_mixed_mask_leaves_non_sky_untouched(self):
        d = DepthMap(room_like_depth(16, 32))
        sky = np.zeros((16, 32), bool)
        sky[:4] = True
        out = assign_sky_depth(d, PixelMask(sky), 30.0)
        assert np.array_equal(out.data[~sky], d.data[~sky])
        assert np.all(out.data[sky] == 30.0)

    def test_default_sky_depth(self):
        d = DepthMap(np.full((8, 16), 4.0))
        sky = np.zeros((8, 16), bool)
        sky[0] = True
        assert default_sky_depth(d, sky=PixelMask(sky)) == pytest.approx(6.0)


class TestEstimate:
    def test_identical_depths_recover_identity(self):
        d = DepthMap(room_like_depth(16, 32))
        omega = PixelMask(np.ones((16, 32), bool))
        res = estimate_alignment(d, d, omega, lam=1.0)
        assert abs(res.scale - 1.0) < 1e-9
        assert np.abs(res.shift).max() < 1e-9

    def test_synthetic_recovery(self):
        h, w = 48, 96
        db = room_like_depth(h, w, seed=1)
        s_star = smooth_field(h, w, 0.4, seed=2)
        df = 1.7 * db + s_star
        res = estimate_alignment(DepthMap(db), DepthMap(df), PixelMask(np.ones((h, w), bool)), lam=1.0)
        depth_range = df.max() - df.min()
        assert abs(res.scale - 1.7) < 0.017
        rmse = np.sqrt(np.mean((res.shift - s_star) ** 2))
        assert rmse < 0.01 * depth_range
        out = apply_alignment(DepthMap(db), res)
        assert np.abs(out.data - df).max() < 0.02 * depth_range

    def test_harmonic_extension_of_constant_shift(self):
        h, w = 24, 48
        db = room_like_depth(h, w, seed=3)
        df = db + 0.5
        omega = np.zeros((h, w), bool)
        omega[:, : w // 2] = True
        res = estimate_alignment(DepthMap(db), DepthMap(df), PixelMask(omega), lam=1.0)
        assert np.abs(res.shift - 0.5).max() < 1e-3

    def test_empty_omega_raises(self):
        d = DepthMap(np.ones((8, 16)))
        with pytest.raises(DomainError):
            estimate_alignment(d, d, PixelMask(np.zeros((8, 16), bool)))

    def test_energy_monotone(self):
        h, w = 24, 48
        db = room_like_depth(h, w, seed=4)
        df = 0.8 * db + smooth_field(h, w, 0.6, seed=5)
        res = estimate_alignment(DepthMap(db), DepthMap(df), PixelMask(np.ones((h, w), bool)), lam=2.0)
        e = np.array(res.energies)
        assert np.all(np.diff(e) <= 1e-10)

    def test_scale_equivariance(self):
        h, w = 16, 32
        db = room_like_depth(h, w, seed=6)
        df = 1.3 * db + smooth_field(h, w, 0.3, seed=7)
        r1 = estimate_alignment(DepthMap(db), DepthMap(df), PixelMask(np.ones((h, w), bool)), lam=1.0)
        c = 3.7
        r2 = estimate_alignment(DepthMap(c * db), DepthMap(c * df), PixelMask(np.ones((h, w), bool)), lam=1.0)
        assert abs(r1.scale - r2.scale) < 1e-6
        assert np.abs(r2.shift - c * r1.shift).max() < 1e-6

    def test_large_lambda_reduces_to_affine(self):
        h, w = 24, 48
        db = room_like_depth(h, w, seed=8)
        df = 1.4 * db + smooth_field(h, w, 0.5, seed=9)
        res = estimate_alignment(DepthMap(db), DepthMap(df), PixelMask(np.ones((h, w), bool)), lam=1e8)
        assert res.shift.max() - res.shift.min() < 1e-4


class TestApply:
    def test_identity_result(self):
        d = DepthMap(room_like_depth(8, 16))
        res = AlignmentResult(scale=1.0, shift=np.zeros((8, 16)), final_energy=0.0)
        out = apply_alignment(d, res)
        assert np.abs(out.data - d.data).max() < 1e-12

    def test_scale_and_shift_arithmetic(self):
        d = DepthMap(np.full((8, 16), 1.0))
        res = AlignmentResult(scale=2.0, shift=np.full((8, 16), -0.5), final_energy=0.0)
        out = apply_alignment(d, res)
        assert np.all(out.data == 1.5)

    def test_positive_floor(self):
        d = DepthMap(np.full((4, 8), 1.0))
        res = AlignmentResult(scale=0.5, shift=np.full((4, 8), -10.0), final_energy=0.0)
        out = apply_alignment(d, res)
        assert np.all(out.data == 1e-4)


def test_save_load_round_trip(tmp_path):
    res = AlignmentResult(scale=1.25, shift=np.linspace(-1, 1, 32).reshape(4, 8),
                          final_energy=0.5, iterations=7)
    save_alignment(res, tmp_path / "shift.pfm", tmp_path / "meta.json")
    back = load_alignment(tmp_path / "shift.pfm", tmp_path / "meta.json")
    assert back.scale == res.scale
    assert back.iterations == 7
    assert np.abs(back.shift - res.shift).max() < 1e-6
