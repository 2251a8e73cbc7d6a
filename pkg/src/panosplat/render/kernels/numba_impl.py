"""Numba-jitted compositing kernels (the hot path).

Parallel over tiles; forward writes are tile-disjoint and backward scatters
into a per-pair buffer reduced in a fixed order, so results are
bit-reproducible regardless of thread scheduling.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit, prange

from ..preprocess import ALPHA_CULL, TILE

NAME = "numba"


@njit(cache=True, parallel=True, fastmath=False)
def _forward(slots, tile_ranges, tiles_x, tiles_y, width, height,
             means2d, conic, opac, colors, depths, radii,
             color, trans, dsum, wsum):
    for t in prange(tiles_x * tiles_y):
        r0 = tile_ranges[t]
        r1 = tile_ranges[t + 1]
        if r0 == r1:
            continue
        ty = t // tiles_x
        tx = t - ty * tiles_x
        y0 = ty * TILE
        x0 = tx * TILE
        y1 = min(y0 + TILE, height)
        x1 = min(x0 + TILE, width)
        for py in range(y0, y1):
            for px in range(x0, x1):
                T = 1.0
                cr = 0.0
                cg = 0.0
                cb = 0.0
                ds = 0.0
                ws = 0.0
                for k in range(r0, r1):
                    s = slots[k]
                    dx = px - means2d[s, 0]
                    dy = py - means2d[s, 1]
                    r = radii[s]
                    if dx > r or dx < -r or dy > r or dy < -r:
                        continue
                    rho = conic[s, 0] * dx * dx + 2.0 * conic[s, 1] * dx * dy \
                        + conic[s, 2] * dy * dy
                    alpha = opac[s] * math.exp(-0.5 * rho)
                    if alpha > 0.99:
                        alpha = 0.99
                    if alpha < ALPHA_CULL:
                        continue
                    w = alpha * T
                    cr += colors[s, 0] * w
                    cg += colors[s, 1] * w
                    cb += colors[s, 2] * w
                    ds += depths[s] * w
                    ws += w
                    T *= 1.0 - alpha
                color[py, px, 0] = cr
                color[py, px, 1] = cg
                color[py, px, 2] = cb
                trans[py, px] = T
                dsum[py, px] = ds
                wsum[py, px] = ws


def composite_forward(slots, tile_ranges, tiles_x, tiles_y, width, height,
                      means2d, conic, opac, colors, depths, radii):
    color = np.zeros((height, width, 3))
    trans = np.ones((height, width))
    dsum = np.zeros((height, width))
    wsum = np.zeros((height, width))
    if len(slots):
        _forward(slots, tile_ranges, tiles_x, tiles_y, width, height,
                 means2d, conic, opac, colors, depths, radii,
                 color, trans, dsum, wsum)
    return color, trans, dsum, wsum


@njit(cache=True, parallel=True, fastmath=False)
def _backward_scatter(slots, tile_ranges, tiles_x, tiles_y, width, height,
                      means2d, conic, opac, colors, radii, final_trans, dl_dcolor, pairbuf):
    # pairbuf rows are indexed by the tile-sorted pair position k, each
    # written by exactly one tile's thread.
    for t in prange(tiles_x * tiles_y):
        r0 = tile_ranges[t]
        r1 = tile_ranges[t + 1]
        if r0 == r1:
            continue
        ty = t // tiles_x
        tx = t - ty * tiles_x
        y0 = ty * TILE
        x0 = tx * TILE
        y1 = min(y0 + TILE, height)
        x1 = min(x0 + TILE, width)
        for py in range(y0, y1):
            for px in range(x0, x1):
                gr = dl_dcolor[py, px, 0]
                gg = dl_dcolor[py, px, 1]
                gb = dl_dcolor[py, px, 2]
                T_after = final_trans[py, px]
                sr = 0.0
                sg = 0.0
                sb = 0.0
                for k in range(r1 - 1, r0 - 1, -1):
                    s = slots[k]
                    dx = px - means2d[s, 0]
                    dy = py - means2d[s, 1]
                    r = radii[s]
                    if dx > r or dx < -r or dy > r or dy < -r:
                        continue
                    rho = conic[s, 0] * dx * dx + 2.0 * conic[s, 1] * dx * dy \
                        + conic[s, 2] * dy * dy
                    g = math.exp(-0.5 * rho)
                    raw = opac[s] * g
                    alpha = raw if raw < 0.99 else 0.99
                    if alpha < ALPHA_CULL:
                        continue
                    one_m = 1.0 - alpha
                    T_before = T_after / one_m
                    w = alpha * T_before

                    d_alpha = (gr * colors[s, 0] + gg * colors[s, 1] + gb * colors[s, 2]) \
                        * T_before - (gr * sr + gg * sg + gb * sb) / one_m

                    pairbuf[k, 6] += gr * w
                    pairbuf[k, 7] += gg * w
                    pairbuf[k, 8] += gb * w
                    if raw < 0.99:
                        pairbuf[k, 5] += d_alpha * g
                        d_rho = -0.5 * d_alpha * raw
                        pairbuf[k, 2] += d_rho * dx * dx
                        pairbuf[k, 3] += d_rho * 2.0 * dx * dy
                        pairbuf[k, 4] += d_rho * dy * dy
                        pairbuf[k, 0] += -(2.0 * conic[s, 0] * dx + 2.0 * conic[s, 1] * dy) * d_rho
                        pairbuf[k, 1] += -(2.0 * conic[s, 1] * dx + 2.0 * conic[s, 2] * dy) * d_rho

                    sr += colors[s, 0] * w
                    sg += colors[s, 1] * w
                    sb += colors[s, 2] * w
                    T_after = T_before


@njit(cache=True, parallel=True, fastmath=False)
def _backward_reduce(pair_rank, pair_offsets, pairbuf,
                     g_means, g_conic, g_opac, g_colors):
    for s in prange(len(pair_offsets) - 1):
        for j in range(pair_offsets[s], pair_offsets[s + 1]):
            row = pair_rank[j]
            g_means[s, 0] += pairbuf[row, 0]
            g_means[s, 1] += pairbuf[row, 1]
            g_conic[s, 0] += pairbuf[row, 2]
            g_conic[s, 1] += pairbuf[row, 3]
            g_conic[s, 2] += pairbuf[row, 4]
            g_opac[s] += pairbuf[row, 5]
            g_colors[s, 0] += pairbuf[row, 6]
            g_colors[s, 1] += pairbuf[row, 7]
            g_colors[s, 2] += pairbuf[row, 8]


def composite_backward(slots, tile_ranges, pair_rank, pair_offsets, tiles_x, tiles_y,
                       width, height, means2d, conic, opac, colors, depths, radii,
                       final_trans, dl_dcolor):
    K = len(means2d)
    g_means = np.zeros((K, 2))
    g_conic = np.zeros((K, 3))
    g_opac = np.zeros(K)
    g_colors = np.zeros((K, 3))
    if len(slots) == 0:
        return g_means, g_conic, g_opac, g_colors
    pairbuf = np.zeros((len(slots), 9))
    _backward_scatter(slots, tile_ranges, tiles_x, tiles_y, width, height,
                      means2d, conic, opac, colors, radii,
                      final_trans, np.ascontiguousarray(dl_dcolor), pairbuf)
    _backward_reduce(pair_rank, pair_offsets, pairbuf, g_means, g_conic, g_opac, g_colors)
    return g_means, g_conic, g_opac, g_colors
