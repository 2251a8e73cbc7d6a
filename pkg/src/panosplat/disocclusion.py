"""Disocclusion handling: transmittance-based inpaint masks, keyframe
selection, and lifting inpainted RGBD back into the splat cloud.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import maximum_filter

from .cameras import PerspectiveCamera
from .cloud import (
    NORMAL_SIGMA_RATIO,
    SplatCloud,
    logit,
    quats_from_normal_frames,
    rgb_to_dc,
)
from .errors import DomainError, PortError
from .images import PixelMask, write_mask_png, write_pfm, write_rgb_png
from .pano import pixel_to_direction
from .render import render_equirect, render_perspective

log = logging.getLogger(__name__)

MASK_POOL_KERNEL = 25
MASK_THRESHOLD = 0.5


def compute_inpaint_mask(coverage: np.ndarray, threshold: float = MASK_THRESHOLD,
                         kernel: int = MASK_POOL_KERNEL) -> PixelMask:
    """Threshold the map (value < 0.5) and max-pool the binary result with a
    25x25 kernel (stride 1, zero-padded), i.e. dilate the selected region by
    12 px.

    The input is the per-pixel accumulated opacity (1 - remaining
    transmittance): disoccluded pixels carry values near 0 and get masked,
    covered pixels near 1 stay clear.
    """
    t = np.asarray(coverage, dtype=np.float64)
    if t.min() < -1e-9 or t.max() > 1.0 + 1e-9:
        raise DomainError("coverage values must lie in [0, 1]")
    binary = (t < threshold).astype(np.uint8)
    pooled = maximum_filter(binary, size=kernel, mode="constant", cval=0)
    return PixelMask(pooled > 0)


@dataclass(frozen=True)
class Keyframe:
    camera: PerspectiveCamera
    score: int      # newly covered disocclusion cells at selection time
    index: int      # processing order


@dataclass(frozen=True)
class KeyframeConfig:
    count: int = 8
    offset_radius_factor: float = 0.3
    candidate_count: int = 256
    seed: int = 0
    width: int = 512
    height: int = 512
    fov_deg: float = 75.0
    probe_width: int = 64   # coarse equirect transmittance probe per candidate


def _uniform_ball(rng, n, radius):
    v = rng.standard_normal((n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    r = radius * rng.uniform(0, 1, n) ** (1.0 / 3.0)
    return v * r[:, None]


def select_keyframes(cloud: SplatCloud, config: KeyframeConfig = KeyframeConfig()):
    """Greedy coverage-based keyframe selection.

    Candidates sit uniformly in a ball around the origin; each one probes the
    scene with a coarse equirect transmittance render, looks toward its
    disoccluded directions, and claims the world-space cells its view would
    inpaint. Keyframes are picked greedily by newly claimed cells;
    deterministic under the config seed.
    """
    if len(cloud) == 0:
        raise DomainError("keyframe selection needs a non-empty cloud")
    rng = np.random.default_rng(config.seed)
    dists = np.linalg.norm(cloud.positions, axis=1)
    median_dist = float(np.median(dists))
    radius = config.offset_radius_factor * median_dist
    positions = _uniform_ball(rng, config.candidate_count, radius)

    pw = config.probe_width
    ph = pw // 2
    jj, ii = np.meshgrid(np.arange(ph), np.arange(pw), indexing="ij")
    probe_dirs = pixel_to_direction(ii, jj, pw, ph)
    cos_lat = np.cos(np.pi / 2 - np.pi * (jj + 0.5) / ph)  # solid-angle weight

    cell = max(cloud.scene_extent(), 1e-6) / 16.0
    cone_cos = np.cos(np.radians(config.fov_deg) / 2 * 1.2)

    from .render.preprocess import cloud_geometry

    geom = cloud_geometry(cloud)
    candidates = []
    for pos in positions:
        # face resolution above the default W/4 so few-degree holes register
        probe = render_equirect(cloud, origin=pos, size=(pw, ph), geom=geom,
                                face_res=max(pw // 2, 16))
        holes = (1.0 - probe.transmittance) < MASK_THRESHOLD
        if not holes.any():
            candidates.append(None)
            continue
        w = cos_lat * holes
        mean_dir = np.einsum("hw,hwc->c", w, probe_dirs)
        n = np.linalg.norm(mean_dir)
        if n < 1e-9:
            flat = np.argmax((holes * cos_lat).ravel())
            mean_dir = probe_dirs.reshape(-1, 3)[flat]
        else:
            mean_dir = mean_dir / n
        depth = probe.depth[holes]
        depth = np.where(depth > 1e-4, depth, median_dist)
        pts = pos + probe_dirs[holes] * depth[:, None]
        in_cone = probe_dirs[holes] @ mean_dir > cone_cos
        cells = np.unique(np.floor(pts[in_cone] / cell).astype(np.int64), axis=0)
        claims = {tuple(c) for c in cells}
        candidates.append((pos, mean_dir, claims))

    chosen: list[Keyframe] = []
    covered: set = set()
    used = set()
    for order in range(config.count):
        best_gain, best_i = 0, -1
        for i, cand in enumerate(candidates):
            if cand is None or i in used:
                continue
            gain = len(cand[2] - covered)
            if gain > best_gain:
                best_gain, best_i = gain, i
        if best_i < 0:
            break
        pos, direction, claims = candidates[best_i]
        covered |= claims
        used.add(best_i)
        cam = PerspectiveCamera.looking_at(pos, direction, config.fov_deg,
                                           config.width, config.height)
        chosen.append(Keyframe(camera=cam, score=best_gain, index=order))
    return chosen


@dataclass
class InstantiateReport:
    instantiated: int = 0
    skipped: int = 0


def instantiate_from_rgbd(cloud: SplatCloud, cam: PerspectiveCamera, rgb: np.ndarray,
                          depth: np.ndarray, mask: PixelMask,
                          k_tight: float = 1.0, opacity: float = 0.95):
    """One new Gaussian per masked pixel, unprojected at the inpainted depth.

    Tangential sigma covers the pixel footprint (depth / fx * k_tight), the
    local frame faces the camera, and the input cloud is left untouched.
    Masked pixels with non-finite or non-positive depth are skipped and
    counted in the returned report. Returns (grown cloud, report).
    """
    rgb = np.asarray(rgb, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    m = mask.data
    if rgb.shape[:2] != (cam.height, cam.width) or depth.shape != m.shape or rgb.shape[:2] != m.shape:
        raise DomainError("rgb, depth and mask must match the camera resolution")
    report = InstantiateReport()
    ys, xs = np.nonzero(m)
    if len(ys) == 0:
        return cloud.copy(), report
    z = depth[ys, xs]
    ok = np.isfinite(z) & (z > 1e-4)
    report.skipped = int((~ok).sum())
    ys, xs, z = ys[ok], xs[ok], z[ok]
    report.instantiated = len(ys)
    if len(ys) == 0:
        return cloud.copy(), report

    pts = cam.unproject(xs.astype(np.float64), ys.astype(np.float64), z)
    toward_cam = cam.t - pts
    toward_cam /= np.linalg.norm(toward_cam, axis=1, keepdims=True)
    sigma_t = z / cam.fx * k_tight
    log_scales = np.log(np.stack([sigma_t, sigma_t, sigma_t * NORMAL_SIGMA_RATIO], axis=1))
    new = SplatCloud(
        positions=pts,
        rotations=quats_from_normal_frames(toward_cam),
        log_scales=log_scales,
        logit_opacities=np.full(len(ys), logit(opacity)),
        dc=rgb_to_dc(rgb[ys, xs]),
    )
    out = cloud.copy()
    out.positions = np.concatenate([out.positions, new.positions])
    out.rotations = np.concatenate([out.rotations, new.rotations])
    out.log_scales = np.concatenate([out.log_scales, new.log_scales])
    out.logit_opacities = np.concatenate([out.logit_opacities, new.logit_opacities])
    out.dc = np.concatenate([out.dc, new.dc])
    out.normals = np.concatenate([out.normals, new.normals])
    if out.f_rest is not None:
        out.f_rest = np.concatenate([out.f_rest, np.zeros((len(ys), out.f_rest.shape[1]))])
    out.extras = {}
    return out, report


def incremental_inpaint(cloud: SplatCloud, keyframes, inpaint_port, depth_inpaint_port,
                        min_mask_frac: float = 0.001, artifact_dir=None, strict: bool = False):
    """Process keyframes in order: render, mask, inpaint color and depth,
    instantiate, and carry the grown cloud forward. Returns the final cloud
    plus (camera, inpainted image, mask) supervision tuples."""
    supervision = []
    for kf in keyframes:
        cam = kf.camera
        out = render_perspective(cloud, cam)
        mask = compute_inpaint_mask(1.0 - out.transmittance)
        if mask.area() < min_mask_frac * cam.width * cam.height:
            log.info("keyframe %d: mask below %.3f%% of pixels, skipped",
                     kf.index, 100 * min_mask_frac)
            continue
        try:
            inpainted = inpaint_port(out.color, mask)
            depth_in = depth_inpaint_port(out.depth, mask, out.depth)
        except PortError:
            if strict:
                raise
            log.warning("keyframe %d: port failure, skipped", kf.index, exc_info=True)
            continue
        cloud, report = instantiate_from_rgbd(cloud, cam, inpainted, depth_in, mask)
        log.info("keyframe %d: +%d splats (%d skipped)", kf.index,
                 report.instantiated, report.skipped)
        supervision.append((cam, np.asarray(inpainted, dtype=np.float64), mask))
        if artifact_dir is not None:
            _persist_keyframe(artifact_dir, kf, out, mask, inpainted, depth_in)
    return cloud, supervision


def _persist_keyframe(root, kf: Keyframe, out, mask: PixelMask, inpainted, depth_in):
    from pathlib import Path

    d = Path(root)
    d.mkdir(parents=True, exist_ok=True)
    tag = f"kf{kf.index:02d}"
    write_rgb_png(d / f"{tag}_render.png", out.color)
    write_mask_png(d / f"{tag}_mask.png", mask.data)
    write_rgb_png(d / f"{tag}_inpainted.png", inpainted)
    write_pfm(d / f"{tag}_depth.pfm", depth_in)
    (d / f"{tag}_camera.json").write_text(kf.camera.to_json())
