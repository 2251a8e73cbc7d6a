"""Deterministic CPU splat rasterizer: tiled forward, analytic backward,
equirect rendering through cube faces.

Forward model per pixel (front-to-back over globally depth-sorted splats):
alpha_i = min(0.99, opacity_i * exp(-0.5 * d' Sigma'^-1 d)), zeroed outside
the splat's 3-sigma box and below 1/255; C = sum c_i alpha_i T_i with
T_i = prod_{j<i} (1 - alpha_j). Depth is the alpha-weighted expected camera
z. Rendering the same inputs twice is bit-identical (stable sort, fixed
reduction orders).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ..cameras import PerspectiveCamera, cube_face_cameras
from ..cloud import SplatCloud
from ..errors import DomainError
from ..pano import pixel_to_direction
from .kernels import get_backend
from .loss import photometric_loss
from .preprocess import (
    Preprocessed,
    backward_chain,
    bin_tiles,
    cloud_geometry,
    preprocess,
)

__all__ = [
    "RenderOutput",
    "RenderGradients",
    "render_perspective",
    "render_equirect",
    "render_with_gradients",
    "equirect_loss_and_gradients",
    "backprop_image_gradient",
]


@dataclass
class RenderOutput:
    color: np.ndarray          # (H, W, 3) in [0, 1]
    depth: np.ndarray          # (H, W) alpha-weighted expected z-depth, meters
    transmittance: np.ndarray  # (H, W) remaining T after compositing
    raw_color: np.ndarray      # (H, W, 3) pre-clip compositing output


@dataclass
class RenderGradients:
    d_positions: np.ndarray
    d_log_scales: np.ndarray
    d_rotations: np.ndarray
    d_logit_opacities: np.ndarray
    d_dc: np.ndarray

    def scaled(self, f: float) -> "RenderGradients":
        return RenderGradients(self.d_positions * f, self.d_log_scales * f,
                               self.d_rotations * f, self.d_logit_opacities * f,
                               self.d_dc * f)

    def add_(self, other: "RenderGradients") -> "RenderGradients":
        self.d_positions += other.d_positions
        self.d_log_scales += other.d_log_scales
        self.d_rotations += other.d_rotations
        self.d_logit_opacities += other.d_logit_opacities
        self.d_dc += other.d_dc
        return self

    @staticmethod
    def zeros(n: int) -> "RenderGradients":
        return RenderGradients(np.zeros((n, 3)), np.zeros((n, 3)), np.zeros((n, 4)),
                               np.zeros(n), np.zeros((n, 3)))

    def max_abs(self) -> float:
        return max(
            np.abs(self.d_positions).max(initial=0.0),
            np.abs(self.d_log_scales).max(initial=0.0),
            np.abs(self.d_rotations).max(initial=0.0),
            np.abs(self.d_logit_opacities).max(initial=0.0),
            np.abs(self.d_dc).max(initial=0.0),
        )


class _Forward:
    """One rendered view, retaining what the backward pass needs."""

    def __init__(self, cloud: SplatCloud, cam: PerspectiveCamera, backend=None, geom=None):
        self.cloud = cloud
        self.cam = cam
        self.kern = get_backend(backend)
        self.pre: Preprocessed = preprocess(cloud, cam, geom=geom)
        (self.slots, self.tile_ranges, self.pair_rank, self.pair_offsets,
         self.tiles_x, self.tiles_y) = bin_tiles(self.pre, cam.width, cam.height)
        raw, trans, dsum, wsum = self.kern.composite_forward(
            self.slots, self.tile_ranges, self.tiles_x, self.tiles_y,
            cam.width, cam.height,
            self.pre.means2d, self.pre.conic, self.pre.opac, self.pre.colors,
            self.pre.depths, self.pre.radii)
        self.raw = raw
        self.trans = trans
        self.depth = np.where(wsum > 1e-12, dsum / np.maximum(wsum, 1e-12), 0.0)

    def output(self) -> RenderOutput:
        return RenderOutput(color=np.clip(self.raw, 0.0, 1.0), depth=self.depth,
                            transmittance=self.trans, raw_color=self.raw)

    def backward(self, dl_dcolor: np.ndarray) -> RenderGradients:
        g_means, g_conic, g_opac, g_colors = self.kern.composite_backward(
            self.slots, self.tile_ranges, self.pair_rank, self.pair_offsets,
            self.tiles_x, self.tiles_y, self.cam.width, self.cam.height,
            self.pre.means2d, self.pre.conic, self.pre.opac, self.pre.colors,
            self.pre.depths, self.pre.radii, self.trans, dl_dcolor)
        g = backward_chain(self.pre, g_means, g_conic, g_opac, g_colors, self.cloud)
        return RenderGradients(*g)


def render_perspective(cloud: SplatCloud, cam: PerspectiveCamera, backend=None) -> RenderOutput:
    return _Forward(cloud, cam, backend).output()


def render_with_gradients(cloud: SplatCloud, cam: PerspectiveCamera, target: np.ndarray,
                          loss_weights=(0.8, 0.2), pixel_weight=None, backend=None):
    """Photometric loss against `target` plus exact parameter gradients."""
    target = np.asarray(target, dtype=np.float64)
    if target.shape != (cam.height, cam.width, 3):
        raise DomainError("target resolution must match the camera")
    fwd = _Forward(cloud, cam, backend)
    loss, dl_dcolor = photometric_loss(fwd.raw, target, loss_weights[0], loss_weights[1],
                                       weight=pixel_weight)
    return loss, fwd.backward(dl_dcolor)


def backprop_image_gradient(cloud: SplatCloud, cam: PerspectiveCamera,
                            dl_dcolor: np.ndarray, backend=None):
    """Push an externally supplied per-pixel color gradient through the
    renderer's backward pass (the hook used for distillation-style ports).
    Returns (RenderOutput, RenderGradients); an all-zero input yields zero
    gradients."""
    fwd = _Forward(cloud, cam, backend)
    return fwd.output(), fwd.backward(np.asarray(dl_dcolor, dtype=np.float64))


# --- Equirect rendering through cube faces -------------------------------


@lru_cache(maxsize=8)
def _equirect_gather(width: int, height: int, face_res: int):
    jj, ii = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    dirs = pixel_to_direction(ii, jj, width, height)
    ax = np.argmax(np.abs(dirs), axis=-1)
    sign = np.take_along_axis(dirs, ax[..., None], axis=-1)[..., 0] > 0
    face_of = np.empty((height, width), dtype=np.int64)
    face_of[(ax == 2) & sign] = 0
    face_of[(ax == 0) & sign] = 1
    face_of[(ax == 2) & ~sign] = 2
    face_of[(ax == 0) & ~sign] = 3
    face_of[(ax == 1) & sign] = 4
    face_of[(ax == 1) & ~sign] = 5

    cams = cube_face_cameras(face_res)
    fx = face_res / 2.0
    u = np.empty((height, width))
    v = np.empty((height, width))
    inv_cos = np.empty((height, width))
    for f, cam in enumerate(cams):
        m = face_of == f
        dc = dirs[m] @ cam.R
        z = dc[:, 2]
        u[m] = fx * dc[:, 0] / z + cam.cx - 0.5
        v[m] = cam.cy - fx * dc[:, 1] / z - 0.5
        inv_cos[m] = 1.0 / z

    u = np.clip(u, 0.0, face_res - 1.0)
    v = np.clip(v, 0.0, face_res - 1.0)
    i0 = np.minimum(np.floor(u), face_res - 2).astype(np.int64)
    j0 = np.minimum(np.floor(v), face_res - 2).astype(np.int64)
    fu = u - i0
    fv = v - j0
    base = face_of * face_res * face_res
    tap_idx = np.stack([
        base + j0 * face_res + i0,
        base + j0 * face_res + i0 + 1,
        base + (j0 + 1) * face_res + i0,
        base + (j0 + 1) * face_res + i0 + 1,
    ], axis=-1)
    tap_w = np.stack([(1 - fu) * (1 - fv), fu * (1 - fv), (1 - fu) * fv, fu * fv], axis=-1)
    return tap_idx, tap_w, inv_cos


def _gather(faces: np.ndarray, tap_idx, tap_w):
    flat = faces.reshape(-1, *faces.shape[3:])
    if flat.ndim == 1:
        return np.einsum("hwk,hwk->hw", tap_w, flat[tap_idx])
    return np.einsum("hwk,hwkc->hwc", tap_w, flat[tap_idx])


class _EquirectForward:
    def __init__(self, cloud: SplatCloud, origin, width: int, height: int,
                 face_res=None, backend=None, geom=None):
        if width != 2 * height:
            raise DomainError("equirect renders need W == 2H")
        self.face_res = int(face_res or -(-width // 4))
        self.cams = cube_face_cameras(self.face_res, origin=origin)
        geom = geom or cloud_geometry(cloud)  # shared across the six faces
        self.faces = [_Forward(cloud, cam, backend, geom=geom) for cam in self.cams]
        self.tap_idx, self.tap_w, self.inv_cos = _equirect_gather(width, height, self.face_res)
        self.raw = _gather(np.stack([f.raw for f in self.faces]), self.tap_idx, self.tap_w)
        self.trans = _gather(np.stack([f.trans for f in self.faces]), self.tap_idx, self.tap_w)
        face_depth = np.stack([f.depth for f in self.faces])
        self.depth = _gather(face_depth, self.tap_idx, self.tap_w) * self.inv_cos

    def output(self) -> RenderOutput:
        return RenderOutput(color=np.clip(self.raw, 0.0, 1.0), depth=self.depth,
                            transmittance=self.trans, raw_color=self.raw)

    def backward(self, dl_dcolor: np.ndarray) -> RenderGradients:
        res = self.face_res
        face_grad = np.zeros((6 * res * res, 3))
        contrib = self.tap_w[..., None] * dl_dcolor[:, :, None, :]
        np.add.at(face_grad, self.tap_idx.reshape(-1),
                  contrib.reshape(-1, 3))
        total = RenderGradients.zeros(len(self.faces[0].cloud))
        for f, fwd in enumerate(self.faces):
            g = face_grad[f * res * res:(f + 1) * res * res].reshape(res, res, 3)
            if np.any(g):
                total.add_(fwd.backward(g))
        return total


def render_equirect(cloud: SplatCloud, origin=(0.0, 0.0, 0.0), size=(1024, 512),
                    face_res=None, backend=None, geom=None) -> RenderOutput:
    """Render the cloud to an equirect panorama from `origin` via six
    90-degree cube faces at ceil(W/4)^2, resampled bilinearly.

    `geom` optionally reuses a cloud_geometry() across many origins."""
    w, h = int(size[0]), int(size[1])
    return _EquirectForward(cloud, origin, w, h, face_res, backend, geom=geom).output()


def equirect_loss_and_gradients(cloud: SplatCloud, target: np.ndarray,
                                origin=(0.0, 0.0, 0.0), loss_weights=(0.8, 0.2),
                                pixel_weight=None, face_res=None, backend=None):
    target = np.asarray(target, dtype=np.float64)
    h, w = target.shape[:2]
    fwd = _EquirectForward(cloud, origin, w, h, face_res, backend)
    loss, dl_dcolor = photometric_loss(fwd.raw, target, loss_weights[0], loss_weights[1],
                                       weight=pixel_weight)
    return loss, fwd.backward(dl_dcolor)
