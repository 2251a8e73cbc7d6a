import numpy as np
import pytest

from panosplat.blend import poisson_blend
from panosplat.errors import DomainError
from panosplat.images import PixelMask
from panosplat.linalg import grid_laplacian_apply


def dense_poisson_solve(src, dst, mask, wrap_u=True):
    """Dense direct solve of the same blending system (test oracle)."""
    h, w = mask.shape
    out = dst.copy()
    idx = {p: k for k, p in enumerate(zip(*np.nonzero(mask)))}
    n = len(idx)

    def neighbors(y, x):
        for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            ny, nx = y + dy, x + dx
            if ny < 0 or ny >= h:
                continue
            if wrap_u:
                nx %= w
            elif nx < 0 or nx >= w:
                continue
            yield ny, nx

    for c in range(src.shape[2]):
        A = np.zeros((n, n))
        b = np.zeros(n)
        for (y, x), k in idx.items():
            deg = 0
            for ny, nx in neighbors(y, x):
                deg += 1
                b[k] += src[y, x, c] - src[ny, nx, c]
                if mask[ny, nx]:
                    A[k, idx[(ny, nx)]] -= 1.0
                else:
                    b[k] += dst[ny, nx, c]
            A[k, k] = deg
        out[mask, c] = np.linalg.solve(A, b)[[idx[p] for p in zip(*np.nonzero(mask))]]
    return out


def disk_mask(h, w, cy, cx, r):
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r


def test_src_equals_dst_is_identity():
    rng = np.random.default_rng(0)
    img = rng.uniform(0, 1, (16, 32, 3))
    mask = PixelMask(disk_mask(16, 32, 8, 16, 5))
    out = poisson_blend(img, img, mask)
    assert np.abs(out - img).max() < 1e-6


def test_empty_mask_returns_dst_bit_exact():
    rng = np.random.default_rng(1)
    src = rng.uniform(0, 1, (8, 16, 3))
    dst = rng.uniform(0, 1, (8, 16, 3))
    out = poisson_blend(src, dst, PixelMask(np.zeros((8, 16), bool)))
    assert np.array_equal(out, dst)


def test_full_mask_raises():
    img = np.zeros((8, 16, 3))
    with pytest.raises(DomainError):
        poisson_blend(img, img, PixelMask(np.ones((8, 16), bool)))


def test_outside_mask_untouched_inside_matches_dense_oracle():
    rng = np.random.default_rng(2)
    src = rng.uniform(0, 1, (16, 32, 3))
    dst = rng.uniform(0, 1, (16, 32, 3))
    m = disk_mask(16, 32, 8, 5, 4)
    out = poisson_blend(src, dst, PixelMask(m))
    assert np.array_equal(out[~m], dst[~m])
    expected = dense_poisson_solve(src, dst, m)
    assert np.abs(out - expected).max() < 1e-6


def test_interior_laplacian_matches_src():
    rng = np.random.default_rng(3)
    src = rng.uniform(0, 1, (16, 32, 3))
    dst = rng.uniform(0, 1, (16, 32, 3))
    m = disk_mask(16, 32, 8, 16, 5)
    out = poisson_blend(src, dst, PixelMask(m))
    interior = m & np.roll(m, 1, 0) & np.roll(m, -1, 0) & np.roll(m, 1, 1) & np.roll(m, -1, 1)
    for c in range(3):
        lap_out = grid_laplacian_apply(out[..., c], wrap_u=True)
        lap_src = grid_laplacian_apply(src[..., c], wrap_u=True)
        assert np.abs(lap_out - lap_src)[interior].max() < 1e-4


def test_mask_across_seam():
    rng = np.random.default_rng(4)
    src = rng.uniform(0, 1, (12, 24, 3))
    dst = rng.uniform(0, 1, (12, 24, 3))
    m = np.zeros((12, 24), bool)
    m[4:8, :3] = True
    m[4:8, -3:] = True  # region continues across the wrap seam
    out = poisson_blend(src, dst, PixelMask(m))
    expected = dense_poisson_solve(src, dst, m)
    assert np.abs(out - expected).max() < 1e-6


def test_shift_conjugation_invariance():
    rng = np.random.default_rng(5)
    src = rng.uniform(0, 1, (12, 24, 3))
    dst = rng.uniform(0, 1, (12, 24, 3))
    m = disk_mask(12, 24, 6, 2, 3)
    k = 9
    direct = poisson_blend(np.roll(src, k, 1), np.roll(dst, k, 1), PixelMask(np.roll(m, k, 1)))
    conjugated = np.roll(poisson_blend(src, dst, PixelMask(m)), k, 1)
    assert np.abs(direct - conjugated).max() < 1e-6
