"""Deterministic mock implementations backing the ports in offline runs.

Every mock is a pure function of its inputs plus the fixture context:
repeated calls produce byte-identical results. The segmentation and depth
mocks recover fixture ground truth from the image content alone (palette
matching / fixture comparison), standing in for the real models without
hidden side channels.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .cloud import Sim3Transform, SplatCloud, logit, quats_from_normal_frames, rgb_to_dc
from .errors import DomainError
from .fixtures import OBJECT_PALETTE, generate
from .images import DepthMap, EquirectImage, PixelMask
from .linalg import harmonic_fill
from .ports import DetectedObject

PALETTE_TOLERANCE = 0.02


@dataclass(frozen=True)
class MockContext:
    """Fixture the mocks treat as ground truth; pure data, no state."""

    fixture_name: str = "room01"
    distort_bg_depth: bool = True          # exercise the alignment solver
    bg_depth_scale: float = 1.3
    bg_depth_shift_amplitude: float = 0.25  # meters, low-frequency field
    pose_match_result: Sim3Transform = field(default_factory=Sim3Transform.identity)


def mock_panorama(ctx: MockContext, prompt: str, resolution) -> EquirectImage:
    """Known fixture names render the procedural scene; anything else gets a
    deterministic prompt-seeded gradient panorama."""
    w, h = int(resolution[0]), int(resolution[1])
    name = ctx.fixture_name if ctx.fixture_name in prompt or prompt == ctx.fixture_name \
        else prompt.strip()
    try:
        return generate(name, w, h).panorama
    except DomainError:
        pass
    seed = int.from_bytes(hashlib.sha256(prompt.encode()).digest()[:4], "little")
    rng = np.random.default_rng(seed)
    yy, xx = np.meshgrid(np.linspace(0, np.pi, h), np.linspace(0, 2 * np.pi, w,
                                                               endpoint=False), indexing="ij")
    img = np.stack([
        0.5 + 0.3 * np.sin(xx * rng.integers(1, 4) + rng.uniform(0, 6)),
        0.5 + 0.3 * np.cos(yy * rng.integers(1, 3)),
        0.5 + 0.2 * np.sin(xx + yy),
    ], axis=-1)
    return EquirectImage(np.clip(img, 0, 1))


def mock_segment(ctx: MockContext, panorama: EquirectImage):
    """Palette-keyed segmentation: flat fixture object colors are recovered
    exactly from the image; scenes without palette colors yield nothing."""
    from .fixtures import _OBJECT_DESCRIPTIONS

    detections = []
    for label, color in OBJECT_PALETTE.items():
        dist = np.abs(panorama.data - np.asarray(color)).max(axis=2)
        mask = dist < PALETTE_TOLERANCE
        if mask.sum() < 8:
            continue
        detections.append(DetectedObject(
            class_id=label,
            description=_OBJECT_DESCRIPTIONS.get(label, label),
            mask=PixelMask(mask),
            confidence=1.0,
        ))
    return detections


def mock_depth(ctx: MockContext, image: EquirectImage) -> DepthMap:
    """Fixture-aware monocular depth stand-in.

    Pixels matching the fixture panorama get ground-truth scene depth;
    everything else (e.g. inpainted background) gets the fixture's
    background depth. If the image is not the fixture panorama itself, the
    result is additionally distorted by a global scale and a smooth shift so
    the downstream alignment solver has real work to do.
    """
    w, h = image.width, image.height
    try:
        fx = generate(ctx.fixture_name, w, h)
    except DomainError:
        lum = image.data.mean(axis=2)
        return DepthMap(2.0 + 6.0 * (1.0 - lum))
    matches = np.abs(image.data - fx.panorama.data).max(axis=2) < PALETTE_TOLERANCE
    depth = np.where(matches, fx.depth.data, fx.bg_depth.data)
    is_full_pano = matches.mean() > 0.999
    if not is_full_pano and ctx.distort_bg_depth:
        yy, xx = np.meshgrid(np.linspace(0, 2 * np.pi, h),
                             np.linspace(0, 2 * np.pi, w, endpoint=False), indexing="ij")
        shift = ctx.bg_depth_shift_amplitude * (0.6 * np.sin(xx) + 0.4 * np.cos(yy))
        depth = ctx.bg_depth_scale * depth + shift
    return DepthMap(np.maximum(depth, 1e-3))


def mock_inpaint2d(image: np.ndarray, mask: PixelMask, sweeps: int = 200) -> np.ndarray:
    """Iterative boundary-color diffusion fill: 200 Jacobi sweeps of
    4-neighbor averaging over the masked pixels, seeded with the boundary
    mean. Deterministic."""
    out = np.array(image, dtype=np.float64)
    m = mask.data
    if not m.any():
        return out
    from scipy.ndimage import binary_dilation

    ring = binary_dilation(m) & ~m
    if ring.any():
        out[m] = out[ring].mean(axis=0)
    else:
        out[m] = 0.5

    h, w = m.shape
    count = np.full((h, w), 4.0)
    count[0] -= 1
    count[-1] -= 1
    count[:, 0] -= 1
    count[:, -1] -= 1

    for _ in range(sweeps):
        acc = np.zeros_like(out)
        acc[1:] += out[:-1]
        acc[:-1] += out[1:]
        acc[:, 1:] += out[:, :-1]
        acc[:, :-1] += out[:, 1:]
        avg = acc / count[..., None]
        out[m] = avg[m]
    return out


def mock_depth_inpaint(depth: np.ndarray, mask: PixelMask, guide: np.ndarray) -> np.ndarray:
    """Scene-aligned depth inpainting stand-in: harmonic extension of the
    guide depth into the mask (Dirichlet boundary from the surrounding
    rendered depth)."""
    return harmonic_fill(np.asarray(guide, dtype=np.float64), mask.data)


def _fibonacci_sphere(n):
    i = np.arange(n, dtype=np.float64)
    phi = np.arccos(1 - 2 * (i + 0.5) / n)
    theta = np.pi * (1 + 5 ** 0.5) * i
    return np.stack([np.sin(phi) * np.cos(theta), np.cos(phi),
                     np.sin(phi) * np.sin(theta)], axis=1)


def _primitive_points(kind: str, n: int, rng):
    if kind == "sphere":
        pts = 0.5 * _fibonacci_sphere(n)
        normals = pts / np.linalg.norm(pts, axis=1, keepdims=True)
        return pts, normals
    if kind == "cylinder":
        n_side = int(n * 0.7)
        ang = rng.uniform(0, 2 * np.pi, n_side)
        y = rng.uniform(-0.5, 0.5, n_side)
        side = np.stack([0.35 * np.cos(ang), y, 0.35 * np.sin(ang)], axis=1)
        side_n = np.stack([np.cos(ang), np.zeros(n_side), np.sin(ang)], axis=1)
        n_cap = n - n_side
        r = 0.35 * np.sqrt(rng.uniform(0, 1, n_cap))
        ang2 = rng.uniform(0, 2 * np.pi, n_cap)
        ys = np.where(rng.uniform(size=n_cap) < 0.5, -0.5, 0.5)
        cap = np.stack([r * np.cos(ang2), ys, r * np.sin(ang2)], axis=1)
        cap_n = np.stack([np.zeros(n_cap), np.sign(ys), np.zeros(n_cap)], axis=1)
        return np.concatenate([side, cap]), np.concatenate([side_n, cap_n])
    # default: box
    per_face = n // 6
    pts, normals = [], []
    for axis in range(3):
        for sign in (-1.0, 1.0):
            k = per_face if (axis, sign) != (2, 1.0) else n - 5 * per_face
            uv = rng.uniform(-0.5, 0.5, (k, 2))
            p = np.empty((k, 3))
            others = [a for a in range(3) if a != axis]
            p[:, others[0]] = uv[:, 0]
            p[:, others[1]] = uv[:, 1]
            p[:, axis] = 0.5 * sign
            nrm = np.zeros((k, 3))
            nrm[:, axis] = sign
            pts.append(p)
            normals.append(nrm)
    return np.concatenate(pts), np.concatenate(normals)


def mock_object_gen(crop_image: np.ndarray, description: str, style_image=None,
                    seed: int = 0, count: int = 2000) -> SplatCloud:
    """Label-keyed primitive splat cloud in a unit-extent canonical frame.

    The shape comes from keywords in the description (sphere-ish, cylinder,
    else box); the color is the style image's mean (falling back to the
    brightest-saturation crop color). Candidate seeds jitter positions
    slightly so ranking has distinct candidates to pick from.
    """
    text = description.lower()
    if any(kw in text for kw in ("ball", "sphere", "round", "globe")):
        kind = "sphere"
    elif any(kw in text for kw in ("cylinder", "pillar", "column", "can")):
        kind = "cylinder"
    else:
        kind = "box"
    rng = np.random.default_rng(seed * 7919 + int.from_bytes(
        hashlib.sha256(text.encode()).digest()[:4], "little"))
    pts, normals = _primitive_points(kind, count, rng)
    pts = pts + rng.normal(0, 0.002, pts.shape)

    ref = style_image if style_image is not None else crop_image
    color = np.asarray(ref, dtype=np.float64).reshape(-1, 3)
    sat = color.max(axis=1) - color.min(axis=1)
    base = color[sat >= np.percentile(sat, 90)].mean(axis=0) if (sat > 0.1).any() \
        else color.mean(axis=0)

    spacing = 2.2 / np.sqrt(count)
    return SplatCloud(
        positions=pts,
        rotations=quats_from_normal_frames(normals),
        log_scales=np.full((count, 3), np.log(spacing)) + np.log([1.0, 1.0, 0.2]),
        logit_opacities=np.full(count, logit(0.92)),
        dc=rgb_to_dc(np.tile(np.clip(base, 0.02, 0.98), (count, 1))),
    )


def mock_rank(candidates, reference: np.ndarray) -> int:
    """Coverage heuristic: the candidate whose pixels differ most from its
    dominant corner color wins; ties break toward the lowest index."""
    best_idx, best_cov = 0, -1.0
    for i, cand in enumerate(candidates):
        img = np.asarray(cand, dtype=np.float64)
        corners = np.stack([img[0, 0], img[0, -1], img[-1, 0], img[-1, -1]])
        bgcol = np.median(corners, axis=0)
        cov = float((np.abs(img - bgcol).max(axis=2) > 0.08).mean())
        if cov > best_cov + 1e-12:
            best_idx, best_cov = i, cov
    return best_idx
