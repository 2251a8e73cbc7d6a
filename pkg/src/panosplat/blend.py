"""Poisson blending on panoramas (wrap-aware gradient-domain compositing)."""

from __future__ import annotations

import numpy as np

from .errors import DomainError
from .images import PixelMask
from .linalg import cg_solve, grid_laplacian_apply, masked_poisson_system


def poisson_blend(src: np.ndarray, dst: np.ndarray, mask: PixelMask,
                  wrap_u: bool = True, rtol: float = 1e-8, maxiter: int = 10000) -> np.ndarray:
    """Copy the gradient field of `src` into `dst` inside `mask`.

    Mask pixels are solved so their discrete Laplacian matches src's; all
    other pixels are returned bit-exactly from dst. Horizontal adjacency
    wraps when wrap_u is set (the panorama seam behaves like any interior
    column pair).
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    m = mask.data if isinstance(mask, PixelMask) else np.asarray(mask, dtype=bool)
    if src.shape != dst.shape or src.shape[:2] != m.shape:
        raise DomainError("src, dst and mask must share their spatial size")
    if not m.any():
        return dst.copy()
    if m.all():
        raise DomainError("mask covers the whole image: no boundary condition")

    out = dst.copy()
    channels = src.reshape(src.shape[0], src.shape[1], -1)
    result = out.reshape(out.shape[0], out.shape[1], -1)
    for c in range(channels.shape[2]):
        lap = grid_laplacian_apply(channels[..., c], wrap_u)
        A, b, _ = masked_poisson_system(m, result[..., c], lap, wrap_u)
        x, _ = cg_solve(A, b, x0=channels[..., c][m], rtol=rtol, maxiter=maxiter)
        result[..., c][m] = x
    return out
