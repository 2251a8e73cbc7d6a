"""Equirectangular panorama geometry.

Convention (fixed package-wide): world is right-handed with +Y up. Pixel
(u, v) with u in [0, W), v in [0, H) maps to azimuth
theta = 2*pi*(u + 0.5)/W - pi and elevation phi = pi/2 - pi*(v + 0.5)/H;
the direction is (cos phi * sin theta, sin phi, cos phi * cos theta), so
the panorama center faces +Z and the wrap seam falls between columns W-1
and 0.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .cameras import PerspectiveCamera
from .errors import DomainError
from .images import DepthMap, EquirectImage, PixelMask


def pixel_to_direction(u, v, width: int, height: int) -> np.ndarray:
    """Unit direction(s) for continuous equirect pixel coords; integer coords hit pixel centers."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if np.any(u < 0) or np.any(u >= width) or np.any(v < 0) or np.any(v >= height):
        raise DomainError("pixel coordinates out of range")
    theta = 2.0 * np.pi * (u + 0.5) / width - np.pi
    phi = np.pi / 2.0 - np.pi * (v + 0.5) / height
    cp = np.cos(phi)
    return np.stack([cp * np.sin(theta), np.sin(phi), cp * np.cos(theta)], axis=-1)


def direction_to_pixel(d: np.ndarray, width: int, height: int):
    """Continuous pixel coords (u, v) for unit direction(s); u wrapped into [0, W)."""
    d = np.asarray(d, dtype=np.float64)
    n = np.linalg.norm(d, axis=-1)
    if np.any(n < 1e-12):
        raise DomainError("zero direction vector")
    if np.any(np.abs(n - 1.0) > 1e-6):
        raise DomainError("direction must be unit length (within 1e-6)")
    theta = np.arctan2(d[..., 0], d[..., 2])
    phi = np.arcsin(np.clip(d[..., 1], -1.0, 1.0))
    u = ((theta + np.pi) / (2.0 * np.pi)) * width - 0.5
    u = np.mod(u, width)
    u = np.where(u >= width, u - width, u)  # mod can round up to the modulus itself
    v = ((np.pi / 2.0 - phi) / np.pi) * height - 0.5
    return u, v


def sample_equirect(data: np.ndarray, u, v) -> np.ndarray:
    """Bilinear sample at continuous coords; wraps horizontally, clamps vertically.

    `data` is (H, W) or (H, W, C); integer coordinates address pixel centers.
    """
    h, w = data.shape[:2]
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    u0 = np.floor(u).astype(np.int64)
    v0 = np.floor(v).astype(np.int64)
    fu = u - u0
    fv = v - v0
    u1 = np.mod(u0 + 1, w)
    u0 = np.mod(u0, w)
    v0c = np.clip(v0, 0, h - 1)
    v1c = np.clip(v0 + 1, 0, h - 1)
    if data.ndim == 3:
        fu = fu[..., None]
        fv = fv[..., None]
    top = data[v0c, u0] * (1 - fu) + data[v0c, u1] * fu
    bot = data[v1c, u0] * (1 - fu) + data[v1c, u1] * fu
    return top * (1 - fv) + bot * fv


def extract_perspective_crop(img: EquirectImage, cam: PerspectiveCamera) -> np.ndarray:
    """Render a perspective view of the panorama through `cam` (rotation only).

    Each output pixel is the bilinear equirect sample along that pixel's ray;
    sampling interpolates correctly across the horizontal wrap seam.
    """
    if np.linalg.norm(cam.t) > 1e-12:
        raise DomainError("perspective crops require a camera at the origin")
    rays = cam.pixel_rays()
    u, v = direction_to_pixel(rays, img.width, img.height)
    return sample_equirect(img.data, u, v)


def wrap_pad(data: np.ndarray, pad: int = 256) -> np.ndarray:
    """Pad horizontally by copying columns across the wrap seam."""
    w = data.shape[1]
    if pad < 0 or pad >= w:
        raise DomainError(f"pad must be in [0, {w}), got {pad}")
    if pad == 0:
        return data.copy()
    return np.concatenate([data[:, w - pad :], data, data[:, :pad]], axis=1)


def wrap_unpad(data: np.ndarray, pad: int) -> np.ndarray:
    """Inverse of wrap_pad: drop the padded columns."""
    if pad < 0:
        raise DomainError("pad must be non-negative")
    if pad == 0:
        return data.copy()
    if data.shape[1] <= 2 * pad:
        raise DomainError("padded width too small for requested pad")
    return data[:, pad:-pad].copy()


def dilate_mask(mask: PixelMask, radius: int) -> PixelMask:
    """Morphological dilation with a (2r+1)^2 square element, wrap-aware in u."""
    if radius < 0:
        raise DomainError("radius must be >= 0")
    if radius == 0:
        return PixelMask(mask.data.copy())
    size = 2 * radius + 1
    out = ndimage.maximum_filter(
        mask.data.astype(np.uint8), size=(size, size), mode=("constant", "wrap"), cval=0
    )
    return PixelMask(out > 0)


def unproject_equirect(depth: DepthMap) -> np.ndarray:
    """World-space points for every pixel: depth along the pixel-center ray. (H, W, 3)."""
    h, w = depth.height, depth.width
    jj, ii = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    dirs = pixel_to_direction(ii, jj, w, h)
    return dirs * depth.data[..., None]


def normals_from_depth(depth: DepthMap) -> np.ndarray:
    """Per-pixel unit normals of the unprojected surface, oriented toward the origin.

    Tangents come from central differences of the 3-D points (wrap-aware in u,
    one-sided at the top/bottom rows); degenerate cross products fall back to
    the inward ray direction.
    """
    h, w = depth.height, depth.width
    pts = unproject_equirect(depth)

    tu = (np.roll(pts, -1, axis=1) - np.roll(pts, 1, axis=1)) * 0.5
    tv = np.empty_like(pts)
    tv[1:-1] = (pts[2:] - pts[:-2]) * 0.5
    if h >= 3:  # second-order one-sided stencils keep border normals honest
        tv[0] = (-3.0 * pts[0] + 4.0 * pts[1] - pts[2]) * 0.5
        tv[-1] = (3.0 * pts[-1] - 4.0 * pts[-2] + pts[-3]) * 0.5
    else:
        tv[0] = pts[1] - pts[0]
        tv[-1] = pts[-1] - pts[-2]

    n = np.cross(tu, tv)
    norms = np.linalg.norm(n, axis=-1)
    jj, ii = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    dirs = pixel_to_direction(ii, jj, w, h)

    bad = norms < 1e-12
    n[bad] = -dirs[bad]
    norms = np.linalg.norm(n, axis=-1)
    n /= norms[..., None]

    flip = np.einsum("hwc,hwc->hw", n, -dirs) < 0
    n[flip] = -n[flip]
    return n
