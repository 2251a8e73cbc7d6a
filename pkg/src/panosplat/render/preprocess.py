"""Per-splat projection and covariance math shared by both kernel backends.

Forward model (per visible Gaussian): project the mean through the camera,
build the 2D covariance Sigma' = J W Sigma W^T J^T + 0.3*I with the
standard frustum clamp on the Jacobian tangents, and hand the compositing
kernels the inverse (conic), the projected mean, the evaluated DC color,
the sigmoid opacity, the camera depth, and a 3-sigma support radius.
Culling: camera z <= 0.01 m, peak alpha < 1/255, or an empty pixel
footprint. The backward pass chains kernel gradients (w.r.t. projected
quantities) to position, log-scale, quaternion, logit-opacity and DC color.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..cameras import PerspectiveCamera
from ..cloud import SH_C0, SplatCloud

Z_NEAR = 0.01
ALPHA_CULL = 1.0 / 255.0
LOWPASS = 0.3
TILE = 16
SIGMA_EXTENT = 3.0


def quat_rotmats(q: np.ndarray) -> np.ndarray:
    """Batched unit-quaternion (w,x,y,z) to rotation matrices, (K,3,3)."""
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    R = np.empty((len(q), 3, 3))
    R[:, 0, 0] = 1 - 2 * (y * y + z * z)
    R[:, 0, 1] = 2 * (x * y - w * z)
    R[:, 0, 2] = 2 * (x * z + w * y)
    R[:, 1, 0] = 2 * (x * y + w * z)
    R[:, 1, 1] = 1 - 2 * (x * x + z * z)
    R[:, 1, 2] = 2 * (y * z - w * x)
    R[:, 2, 0] = 2 * (x * z - w * y)
    R[:, 2, 1] = 2 * (y * z + w * x)
    R[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return R


@dataclass
class CloudGeometry:
    """Camera-independent per-splat quantities, shareable across views."""

    q_n: np.ndarray
    R_g: np.ndarray
    M: np.ndarray
    cov3d: np.ndarray
    opac: np.ndarray
    colors: np.ndarray


def cloud_geometry(cloud: SplatCloud) -> CloudGeometry:
    q = cloud.rotations
    norms = np.linalg.norm(q, axis=1, keepdims=True)
    q_n = q / norms
    R_g = quat_rotmats(q_n)
    M = R_g * np.exp(cloud.log_scales)[:, None, :]
    cov3d = M @ M.transpose(0, 2, 1)
    return CloudGeometry(
        q_n=q_n,
        R_g=R_g,
        M=M,
        cov3d=cov3d,
        opac=1.0 / (1.0 + np.exp(-cloud.logit_opacities)),
        colors=SH_C0 * cloud.dc + 0.5,
    )


@dataclass
class Preprocessed:
    """Visible splats sorted front-to-back, plus everything backward needs."""

    sel: np.ndarray        # (K,) indices into the source cloud, depth-sorted
    means2d: np.ndarray    # (K, 2) center-based pixel coords (u, v)
    conic: np.ndarray      # (K, 3) upper-triangular inverse 2D covariance (A, B, C)
    opac: np.ndarray       # (K,) sigmoid opacities
    colors: np.ndarray     # (K, 3) evaluated RGB
    depths: np.ndarray     # (K,) camera-frame z
    radii: np.ndarray      # (K,) support half-side, pixels
    # intermediates for the backward chain
    q_n: np.ndarray
    R_g: np.ndarray
    M: np.ndarray
    p_cam: np.ndarray
    cov_cam: np.ndarray
    cam: PerspectiveCamera
    n_total: int
    xc: np.ndarray         # frustum-clamped x, y used inside the Jacobian
    yc: np.ndarray
    unclamped_x: np.ndarray
    unclamped_y: np.ndarray


def _empty(cam, n):
    z = np.zeros
    return Preprocessed(
        sel=z(0, np.int64), means2d=z((0, 2)), conic=z((0, 3)), opac=z(0),
        colors=z((0, 3)), depths=z(0), radii=z(0), q_n=z((0, 4)), R_g=z((0, 3, 3)),
        M=z((0, 3, 3)), p_cam=z((0, 3)), cov_cam=z((0, 3, 3)), cam=cam, n_total=n,
        xc=z(0), yc=z(0), unclamped_x=z(0), unclamped_y=z(0),
    )


def preprocess(cloud: SplatCloud, cam: PerspectiveCamera,
               geom: CloudGeometry | None = None) -> Preprocessed:
    n = len(cloud)
    if n == 0:
        return _empty(cam, n)
    if geom is None:
        geom = cloud_geometry(cloud)

    W = cam.R  # camera axes in world coordinates; world->cam is W^T
    p_cam = (cloud.positions - cam.t) @ W
    vis = (p_cam[:, 2] > Z_NEAR) & (np.minimum(geom.opac, 0.99) >= ALPHA_CULL)
    if not vis.any():
        return _empty(cam, n)
    idx = np.nonzero(vis)[0]

    pc = p_cam[idx]
    cov3d = geom.cov3d[idx]
    cov_cam = np.matmul(W.T, np.matmul(cov3d, W))

    x, y, z = pc[:, 0], pc[:, 1], pc[:, 2]
    fx, fy = cam.fx, cam.fy
    u = fx * x / z + cam.cx - 0.5
    v = cam.cy - fy * y / z - 0.5

    # Covariance Jacobian with the standard frustum clamp on the tangents:
    # without it, splats grazing the camera plane get astronomically large
    # (and bogus) screen footprints from the EWA linearization.
    lim_x = 1.3 * (cam.width / (2.0 * fx))
    lim_y = 1.3 * (cam.height / (2.0 * fy))
    xc = np.clip(x / z, -lim_x, lim_x) * z
    yc = np.clip(y / z, -lim_y, lim_y) * z
    inv_z = 1.0 / z
    j00 = fx * inv_z
    j02 = -fx * xc * inv_z * inv_z
    j11 = -fy * inv_z
    j12 = fy * yc * inv_z * inv_z

    # Sigma' = J Sigma_cam J^T + lowpass, with J = [[j00,0,j02],[0,j11,j12]]
    s00 = cov_cam[:, 0, 0]
    s01 = cov_cam[:, 0, 1]
    s02 = cov_cam[:, 0, 2]
    s11 = cov_cam[:, 1, 1]
    s12 = cov_cam[:, 1, 2]
    s22 = cov_cam[:, 2, 2]
    a = j00 * j00 * s00 + 2 * j00 * j02 * s02 + j02 * j02 * s22 + LOWPASS
    b = j00 * (j11 * s01 + j12 * s02) + j02 * (j11 * s12 + j12 * s22)
    c = j11 * j11 * s11 + 2 * j11 * j12 * s12 + j12 * j12 * s22 + LOWPASS
    det = a * c - b * b
    conic = np.stack([c / det, -b / det, a / det], axis=1)

    lam_max = 0.5 * (a + c) + np.sqrt(np.maximum(0.25 * (a - c) ** 2 + b * b, 0.0))
    radii = SIGMA_EXTENT * np.sqrt(lam_max)

    # keep only splats whose support overlaps the image
    ix0 = np.ceil(u - radii)
    ix1 = np.floor(u + radii)
    iy0 = np.ceil(v - radii)
    iy1 = np.floor(v + radii)
    on = (ix0 <= ix1) & (iy0 <= iy1) & (ix1 >= 0) & (ix0 <= cam.width - 1) & \
         (iy1 >= 0) & (iy0 <= cam.height - 1)
    if not on.any():
        return _empty(cam, n)
    keep = np.nonzero(on)[0]
    order = np.argsort(z[keep], kind="stable")
    k = keep[order]
    sel = idx[k]

    return Preprocessed(
        sel=sel,
        means2d=np.stack([u[k], v[k]], axis=1),
        conic=np.ascontiguousarray(conic[k]),
        opac=np.ascontiguousarray(geom.opac[sel]),
        colors=np.ascontiguousarray(geom.colors[sel]),
        depths=np.ascontiguousarray(z[k]),
        radii=np.ascontiguousarray(radii[k]),
        q_n=geom.q_n[sel],
        R_g=geom.R_g[sel],
        M=geom.M[sel],
        p_cam=pc[k],
        cov_cam=cov_cam[k],
        cam=cam,
        n_total=n,
        xc=xc[k],
        yc=yc[k],
        unclamped_x=(np.abs(x / z) <= lim_x)[k].astype(np.float64),
        unclamped_y=(np.abs(y / z) <= lim_y)[k].astype(np.float64),
    )


def bin_tiles(pre: Preprocessed, width: int, height: int):
    """Tile-major pair lists: which sorted splat touches which 16x16 tile.

    Returns (slots_sorted, tile_ranges, pair_rank, pair_offsets, tiles_x,
    tiles_y). slots_sorted[k] is the splat slot of the k-th tile-sorted
    pair, tile_ranges brackets each tile's pairs, and pair_rank maps a
    splat's slot-major pair index to its tile-sorted row (for the
    deterministic gradient reduction).
    """
    tiles_x = (width + TILE - 1) // TILE
    tiles_y = (height + TILE - 1) // TILE
    n_tiles = tiles_x * tiles_y
    K = len(pre.sel)
    if K == 0:
        return (np.zeros(0, np.int64), np.zeros(n_tiles + 1, np.int64),
                np.zeros(0, np.int64), np.zeros(1, np.int64), tiles_x, tiles_y)

    u, v, r = pre.means2d[:, 0], pre.means2d[:, 1], pre.radii
    ix0 = np.clip(np.ceil(u - r), 0, width - 1).astype(np.int64)
    ix1 = np.clip(np.floor(u + r), 0, width - 1).astype(np.int64)
    iy0 = np.clip(np.ceil(v - r), 0, height - 1).astype(np.int64)
    iy1 = np.clip(np.floor(v + r), 0, height - 1).astype(np.int64)
    tx0, tx1 = ix0 // TILE, ix1 // TILE
    ty0, ty1 = iy0 // TILE, iy1 // TILE
    ntx = tx1 - tx0 + 1
    nty = ty1 - ty0 + 1
    counts = ntx * nty
    offsets = np.zeros(K + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    P = int(offsets[-1])

    slot_of_pair = np.repeat(np.arange(K, dtype=np.int64), counts)
    local = np.arange(P, dtype=np.int64) - np.repeat(offsets[:-1], counts)
    ty = ty0[slot_of_pair] + local // ntx[slot_of_pair]
    tx = tx0[slot_of_pair] + local % ntx[slot_of_pair]
    tile_id = ty * tiles_x + tx

    perm = np.argsort(tile_id, kind="stable")
    slots_sorted = slot_of_pair[perm]
    pair_rank = np.empty(P, dtype=np.int64)
    pair_rank[perm] = np.arange(P, dtype=np.int64)
    tile_ranges = np.searchsorted(tile_id[perm], np.arange(n_tiles + 1)).astype(np.int64)
    return slots_sorted, tile_ranges, pair_rank, offsets, tiles_x, tiles_y


def backward_chain(pre: Preprocessed, d_means2d: np.ndarray, d_conic: np.ndarray,
                   d_opac: np.ndarray, d_colors: np.ndarray, cloud: SplatCloud):
    """Chain kernel gradients back to the raw splat parameters.

    Returns dense (n_total, ...) arrays; splats culled from the view keep
    zero gradients.
    """
    n = pre.n_total
    g_pos = np.zeros((n, 3))
    g_logs = np.zeros((n, 3))
    g_quat = np.zeros((n, 4))
    g_logit = np.zeros(n)
    g_dc = np.zeros((n, 3))
    K = len(pre.sel)
    if K == 0:
        return g_pos, g_logs, g_quat, g_logit, g_dc

    cam = pre.cam
    Wm = cam.R
    fx, fy = cam.fx, cam.fy
    x, y, z = pre.p_cam[:, 0], pre.p_cam[:, 1], pre.p_cam[:, 2]

    # colors / opacity
    gdc = d_colors * SH_C0
    op = pre.opac
    glogit = d_opac * op * (1.0 - op)

    # conic -> 2D covariance (through the 2x2 inverse)
    Q = np.empty((K, 2, 2))
    Q[:, 0, 0] = pre.conic[:, 0]
    Q[:, 0, 1] = pre.conic[:, 1]
    Q[:, 1, 0] = pre.conic[:, 1]
    Q[:, 1, 1] = pre.conic[:, 2]
    GQ = np.empty((K, 2, 2))
    GQ[:, 0, 0] = d_conic[:, 0]
    GQ[:, 0, 1] = 0.5 * d_conic[:, 1]
    GQ[:, 1, 0] = 0.5 * d_conic[:, 1]
    GQ[:, 1, 1] = d_conic[:, 2]
    Gcov2 = -np.matmul(Q, np.matmul(GQ, Q))  # dL/dSigma' (symmetric 2x2)

    inv_z = 1.0 / z
    j00 = fx * inv_z
    j02 = -fx * pre.xc * inv_z * inv_z
    j11 = -fy * inv_z
    j12 = fy * pre.yc * inv_z * inv_z
    g00 = Gcov2[:, 0, 0]
    g01 = Gcov2[:, 0, 1]
    g11 = Gcov2[:, 1, 1]

    # dL/dSigma_cam = J^T Gcov2 J, explicit with J = [[j00,0,j02],[0,j11,j12]]
    G_cov_cam = np.empty((K, 3, 3))
    G_cov_cam[:, 0, 0] = j00 * j00 * g00
    G_cov_cam[:, 0, 1] = j00 * g01 * j11
    G_cov_cam[:, 0, 2] = j00 * (g00 * j02 + g01 * j12)
    G_cov_cam[:, 1, 1] = j11 * j11 * g11
    G_cov_cam[:, 1, 2] = j11 * (g01 * j02 + g11 * j12)
    G_cov_cam[:, 2, 2] = j02 * j02 * g00 + 2 * j02 * j12 * g01 + j12 * j12 * g11
    G_cov_cam[:, 1, 0] = G_cov_cam[:, 0, 1]
    G_cov_cam[:, 2, 0] = G_cov_cam[:, 0, 2]
    G_cov_cam[:, 2, 1] = G_cov_cam[:, 1, 2]

    # dL/dJ entries (only the four nonzero slots matter): 2 * Gcov2 J Scam
    sc = pre.cov_cam
    js0 = j00[:, None] * sc[:, 0, :] + j02[:, None] * sc[:, 2, :]  # row 0 of J Scam
    js1 = j11[:, None] * sc[:, 1, :] + j12[:, None] * sc[:, 2, :]  # row 1 of J Scam
    GJ00 = 2 * (g00 * js0[:, 0] + g01 * js1[:, 0])
    GJ02 = 2 * (g00 * js0[:, 2] + g01 * js1[:, 2])
    GJ11 = 2 * (g01 * js0[:, 1] + g11 * js1[:, 1])
    GJ12 = 2 * (g01 * js0[:, 2] + g11 * js1[:, 2])

    # p_cam gradient: the true projection Jacobian for the mean, plus the
    # clamp-aware chain through J's entries
    ux, uy = pre.unclamped_x, pre.unclamped_y
    du, dv = d_means2d[:, 0], d_means2d[:, 1]
    inv_z2 = inv_z * inv_z
    g_pc = np.empty((K, 3))
    g_pc[:, 0] = j00 * du + GJ02 * (-fx * inv_z2) * ux
    g_pc[:, 1] = j11 * dv + GJ12 * (fy * inv_z2) * uy
    g_pc[:, 2] = (-fx * x * inv_z2) * du + (fy * y * inv_z2) * dv \
        + GJ00 * (-fx * inv_z2) \
        + GJ02 * ((1.0 + ux) * fx * pre.xc * inv_z2 * inv_z) \
        + GJ11 * (fy * inv_z2) \
        + GJ12 * (-(1.0 + uy) * fy * pre.yc * inv_z2 * inv_z)
    gpos = g_pc @ Wm.T

    # Sigma_cam = W^T Sigma3 W  =>  dSigma3 = W G W^T
    G_cov3 = np.matmul(Wm, np.matmul(G_cov_cam, Wm.T))
    G_M = 2.0 * np.matmul(G_cov3, pre.M)

    S = np.exp(cloud.log_scales[pre.sel])
    RtGM = np.matmul(pre.R_g.transpose(0, 2, 1), G_M)
    glogs = np.stack([RtGM[:, 0, 0], RtGM[:, 1, 1], RtGM[:, 2, 2]], axis=1) * S

    G_R = G_M * S[:, None, :]
    gq = _quat_grad(pre.q_n, G_R)
    # through normalization (stored quats are unit, so the norm factor is ~1)
    qn = pre.q_n
    gq = gq - qn * np.sum(gq * qn, axis=1, keepdims=True)

    g_pos[pre.sel] = gpos
    g_logs[pre.sel] = glogs
    g_quat[pre.sel] = gq
    g_logit[pre.sel] = glogit
    g_dc[pre.sel] = gdc
    return g_pos, g_logs, g_quat, g_logit, g_dc


def _quat_grad(q: np.ndarray, G: np.ndarray) -> np.ndarray:
    """dL/dq given dL/dR, for unit quaternions (w, x, y, z)."""
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    g = np.empty((len(q), 4))
    g[:, 0] = 2 * (
        -z * G[:, 0, 1] + y * G[:, 0, 2]
        + z * G[:, 1, 0] - x * G[:, 1, 2]
        - y * G[:, 2, 0] + x * G[:, 2, 1]
    )
    g[:, 1] = 2 * (
        y * G[:, 0, 1] + z * G[:, 0, 2]
        + y * G[:, 1, 0] - 2 * x * G[:, 1, 1] - w * G[:, 1, 2]
        + z * G[:, 2, 0] + w * G[:, 2, 1] - 2 * x * G[:, 2, 2]
    )
    g[:, 2] = 2 * (
        -2 * y * G[:, 0, 0] + x * G[:, 0, 1] + w * G[:, 0, 2]
        + x * G[:, 1, 0] + z * G[:, 1, 2]
        - w * G[:, 2, 0] + z * G[:, 2, 1] - 2 * y * G[:, 2, 2]
    )
    g[:, 3] = 2 * (
        -2 * z * G[:, 0, 0] - w * G[:, 0, 1] + x * G[:, 0, 2]
        + w * G[:, 1, 0] - 2 * z * G[:, 1, 1] + y * G[:, 1, 2]
        + x * G[:, 2, 0] + y * G[:, 2, 1]
    )
    return g
