"""Conjugate-gradient solver and 5-point grid Laplacian systems.

All image-grid systems here use 4-neighborhoods, optionally wrapping
horizontally (for panoramas) and always clipping at the top/bottom rows:
border pixels simply have fewer neighbors.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .errors import DomainError


def cg_solve(A, b: np.ndarray, x0=None, rtol: float = 1e-8, maxiter: int = 10000):
    """Jacobi-preconditioned conjugate gradients for SPD `A` (sparse matrix).

    Warm-startable via x0; each iteration decreases the quadratic objective
    0.5*x'Ax - b'x, so outer loops that reuse the previous solution never
    increase their energy. Returns (x, iterations).
    """
    b = np.asarray(b, dtype=np.float64)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=np.float64)
    diag = np.asarray(A.diagonal(), dtype=np.float64)
    inv_diag = np.where(diag > 0, 1.0 / np.maximum(diag, 1e-300), 1.0)

    r = b - A @ x
    z = inv_diag * r
    p = z.copy()
    rz = float(r @ z)
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        bnorm = 1.0
    it = 0
    while it < maxiter and np.linalg.norm(r) > rtol * bnorm:
        Ap = A @ p
        pAp = float(p @ Ap)
        if pAp <= 0:
            break
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        z = inv_diag * r
        rz_next = float(r @ z)
        p = z + (rz_next / rz) * p
        rz = rz_next
        it += 1
    return x, it


def _neighbor_shifts(h: int, w: int, wrap_u: bool):
    """Flat neighbor index and validity arrays for the 4 grid directions."""
    idx = np.arange(h * w).reshape(h, w)
    out = []
    up = np.roll(idx, 1, axis=0)
    valid = np.ones((h, w), dtype=bool)
    valid[0] = False
    out.append((up, valid))
    down = np.roll(idx, -1, axis=0)
    valid = np.ones((h, w), dtype=bool)
    valid[-1] = False
    out.append((down, valid))
    left = np.roll(idx, 1, axis=1)
    valid = np.ones((h, w), dtype=bool)
    if not wrap_u:
        valid[:, 0] = False
    out.append((left, valid))
    right = np.roll(idx, -1, axis=1)
    valid = np.ones((h, w), dtype=bool)
    if not wrap_u:
        valid[:, -1] = False
    out.append((right, valid))
    return out


def grid_laplacian(h: int, w: int, wrap_u: bool) -> sp.csr_matrix:
    """Graph Laplacian of the grid: deg on the diagonal, -1 per neighbor edge."""
    n = h * w
    rows, cols, vals = [], [], []
    deg = np.zeros((h, w), dtype=np.float64)
    for nbr, valid in _neighbor_shifts(h, w, wrap_u):
        deg += valid
        rows.append(np.arange(n)[valid.ravel()])
        cols.append(nbr.ravel()[valid.ravel()])
        vals.append(-np.ones(int(valid.sum())))
    rows.append(np.arange(n))
    cols.append(np.arange(n))
    vals.append(deg.ravel())
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )


def grid_laplacian_apply(field: np.ndarray, wrap_u: bool) -> np.ndarray:
    """Apply the same Laplacian directly: out_p = sum_{q in N(p)} (f_p - f_q)."""
    h, w = field.shape
    flat = field.ravel()
    out = np.zeros_like(flat)
    for nbr, valid in _neighbor_shifts(h, w, wrap_u):
        v = valid.ravel()
        out[v] += flat[v] - flat[nbr.ravel()[v]]
    return out.reshape(h, w)


def masked_poisson_system(mask: np.ndarray, boundary: np.ndarray, guidance_lap: np.ndarray,
                          wrap_u: bool):
    """Dirichlet Poisson system on the masked pixels.

    Unknowns are mask pixels; pixels outside the mask are boundary values.
    Solves deg*x_p - sum_{q in N(p), q in mask} x_q =
    guidance_lap_p + sum_{q in N(p), q not in mask} boundary_q.
    Returns (A, b, index_of_unknown) with A SPD.
    """
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    if mask.all():
        raise DomainError("mask covers the whole image: no boundary condition")
    n_unknown = int(mask.sum())
    index = -np.ones(h * w, dtype=np.int64)
    index[mask.ravel()] = np.arange(n_unknown)

    flat_mask = mask.ravel()
    b = np.asarray(guidance_lap, dtype=np.float64).ravel()[flat_mask].copy()
    deg = np.zeros(n_unknown, dtype=np.float64)
    rows, cols, vals = [], [], []
    own = index[flat_mask]
    bflat = np.asarray(boundary, dtype=np.float64).ravel()

    for nbr, valid in _neighbor_shifts(h, w, wrap_u):
        v = valid.ravel()[flat_mask]
        nb = nbr.ravel()[flat_mask]
        deg += v
        interior = v & flat_mask[nb]
        rows.append(own[interior])
        cols.append(index[nb[interior]])
        vals.append(-np.ones(int(interior.sum())))
        dirichlet = v & ~flat_mask[nb]
        np.add.at(b, own[dirichlet], bflat[nb[dirichlet]])

    rows.append(own)
    cols.append(own)
    vals.append(deg)
    A = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n_unknown, n_unknown),
    )
    return A, b, index


def harmonic_fill(field: np.ndarray, mask: np.ndarray, wrap_u: bool = False,
                  rtol: float = 1e-8, maxiter: int = 10000) -> np.ndarray:
    """Replace masked pixels with the harmonic extension of the surrounding values."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return np.array(field, dtype=np.float64)
    out = np.array(field, dtype=np.float64)
    A, b, _ = masked_poisson_system(mask, out, np.zeros_like(out), wrap_u)
    x0 = out[mask]
    x, _ = cg_solve(A, b, x0=x0, rtol=rtol, maxiter=maxiter)
    out[mask] = x
    return out
