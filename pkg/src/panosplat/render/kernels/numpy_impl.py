"""Pure-numpy compositing kernels: the tiled algorithm with per-tile
vectorization over pixels. Fallback backend; same math as the numba path.
"""

from __future__ import annotations

import numpy as np

from ..preprocess import ALPHA_CULL, TILE

NAME = "numpy"


def _tile_pixels(t, tiles_x, width, height):
    ty, tx = divmod(t, tiles_x)
    x0, y0 = tx * TILE, ty * TILE
    x1, y1 = min(x0 + TILE, width), min(y0 + TILE, height)
    px, py = np.meshgrid(np.arange(x0, x1, dtype=np.float64),
                         np.arange(y0, y1, dtype=np.float64), indexing="xy")
    return x0, y0, x1, y1, px, py


def composite_forward(slots, tile_ranges, tiles_x, tiles_y, width, height,
                      means2d, conic, opac, colors, depths, radii):
    color = np.zeros((height, width, 3))
    trans = np.ones((height, width))
    dsum = np.zeros((height, width))
    wsum = np.zeros((height, width))
    for t in range(tiles_x * tiles_y):
        r0, r1 = int(tile_ranges[t]), int(tile_ranges[t + 1])
        if r0 == r1:
            continue
        x0, y0, x1, y1, px, py = _tile_pixels(t, tiles_x, width, height)
        T = np.ones_like(px)
        C = np.zeros(px.shape + (3,))
        D = np.zeros_like(px)
        Wacc = np.zeros_like(px)
        for k in range(r0, r1):
            s = int(slots[k])
            alpha = _alpha(s, px, py, means2d, conic, opac, radii)
            w = alpha * T
            C += w[..., None] * colors[s]
            D += w * depths[s]
            Wacc += w
            T = T * (1.0 - alpha)
        color[y0:y1, x0:x1] = C
        trans[y0:y1, x0:x1] = T
        dsum[y0:y1, x0:x1] = D
        wsum[y0:y1, x0:x1] = Wacc
    return color, trans, dsum, wsum


def _alpha(s, px, py, means2d, conic, opac, radii):
    dx = px - means2d[s, 0]
    dy = py - means2d[s, 1]
    r = radii[s]
    inside = (np.abs(dx) <= r) & (np.abs(dy) <= r)
    rho = conic[s, 0] * dx * dx + 2.0 * conic[s, 1] * dx * dy + conic[s, 2] * dy * dy
    alpha = np.minimum(opac[s] * np.exp(-0.5 * rho), 0.99)
    alpha[~inside] = 0.0
    alpha[alpha < ALPHA_CULL] = 0.0
    return alpha


def composite_backward(slots, tile_ranges, pair_rank, pair_offsets, tiles_x, tiles_y,
                       width, height, means2d, conic, opac, colors, depths, radii,
                       final_trans, dl_dcolor):
    # pair_rank / pair_offsets are only needed by the numba path's
    # deterministic reduction; the sequential tile loop here is already
    # deterministic.
    K = len(means2d)
    g_means = np.zeros((K, 2))
    g_conic = np.zeros((K, 3))
    g_opac = np.zeros(K)
    g_colors = np.zeros((K, 3))
    for t in range(tiles_x * tiles_y):
        r0, r1 = int(tile_ranges[t]), int(tile_ranges[t + 1])
        if r0 == r1:
            continue
        x0, y0, x1, y1, px, py = _tile_pixels(t, tiles_x, width, height)
        gC = dl_dcolor[y0:y1, x0:x1]
        T_after = final_trans[y0:y1, x0:x1].copy()
        S = np.zeros(px.shape + (3,))
        for k in range(r1 - 1, r0 - 1, -1):
            s = int(slots[k])
            dx = px - means2d[s, 0]
            dy = py - means2d[s, 1]
            r = radii[s]
            inside = (np.abs(dx) <= r) & (np.abs(dy) <= r)
            rho = conic[s, 0] * dx * dx + 2.0 * conic[s, 1] * dx * dy + conic[s, 2] * dy * dy
            raw = opac[s] * np.exp(-0.5 * rho)
            alpha = np.minimum(raw, 0.99)
            live = inside & (alpha >= ALPHA_CULL)
            if not live.any():
                continue
            one_m = 1.0 - np.where(live, alpha, 0.0)
            T_before = T_after / one_m
            w = np.where(live, alpha * T_before, 0.0)

            g_colors[s] += np.einsum("hwc,hw->c", gC, w)
            d_alpha = np.einsum("hwc,c->hw", gC, colors[s]) * T_before \
                - np.einsum("hwc,hwc->hw", gC, S) / one_m
            d_alpha = np.where(live, d_alpha, 0.0)

            unclamped = live & (raw < 0.99)
            g = np.exp(-0.5 * rho)
            d_op = np.where(unclamped, d_alpha * g, 0.0)
            g_opac[s] += d_op.sum()
            d_rho = np.where(unclamped, d_alpha * opac[s] * g * -0.5, 0.0)

            g_conic[s, 0] += (d_rho * dx * dx).sum()
            g_conic[s, 1] += (d_rho * 2.0 * dx * dy).sum()
            g_conic[s, 2] += (d_rho * dy * dy).sum()
            gu = -(2.0 * conic[s, 0] * dx + 2.0 * conic[s, 1] * dy) * d_rho
            gv = -(2.0 * conic[s, 1] * dx + 2.0 * conic[s, 2] * dy) * d_rho
            g_means[s, 0] += gu.sum()
            g_means[s, 1] += gv.sum()

            S = S + w[..., None] * colors[s]
            T_after = T_before
    return g_means, g_conic, g_opac, g_colors
