"""Align a background depth map to a reference depth with a global scale
plus a smooth per-pixel shift field.

Energy, with Omega the trusted-overlap pixel set and N4 the wrap-aware
4-neighborhood:

    E(alpha, s) = sum_Omega (alpha*D_B + s - D_F)^2
                + lam * sum_N4 (s_p - s_q)^2

minimized by block coordinate descent: alpha has a closed form with s
fixed, and s solves an SPD system (data term on Omega, membrane smoothness
everywhere, which extends s harmonically outside Omega). Depths are
normalized by median(D_F) internally so `lam` behaves the same across
scene scales.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import DomainError
from .images import DepthMap, PixelMask
from .linalg import cg_solve, grid_laplacian


@dataclass(frozen=True)
class AlignmentResult:
    scale: float                 # alpha, unitless, > 0
    shift: np.ndarray            # per-pixel shift field s, meters
    final_energy: float
    iterations: int = 0
    scale_clamped: bool = False  # set when the closed form produced alpha <= 0
    energies: tuple = ()         # energy after each outer iteration (normalized units)

    def __post_init__(self):
        if self.scale <= 0:
            raise DomainError("alignment scale must be positive")
        if not np.all(np.isfinite(self.shift)):
            raise DomainError("shift field must be finite")


def assign_sky_depth(depth: DepthMap, sky: PixelMask, d_max: float) -> DepthMap:
    """Overwrite sky pixels with d_max; all other pixels pass through untouched."""
    out = depth.data.copy()
    out[sky.data] = d_max
    return DepthMap(out)


def default_sky_depth(depth: DepthMap, sky: PixelMask) -> float:
    """1.5x the 99th percentile of non-sky depth (whole map if all sky)."""
    non_sky = depth.data[~sky.data]
    ref = non_sky if non_sky.size else depth.data.ravel()
    return float(1.5 * np.percentile(ref, 99))


def alignment_energy(d_b: np.ndarray, d_f: np.ndarray, omega: np.ndarray,
                     lam: float, alpha: float, s: np.ndarray, L: sp.csr_matrix) -> float:
    r = alpha * d_b + s - d_f
    data = float(np.sum(r[omega] ** 2))
    sf = s.ravel()
    smooth = float(sf @ (L @ sf)) if lam > 0 else 0.0  # x'Lx = sum over edges (s_p - s_q)^2
    return data + lam * smooth


def estimate_alignment(d_b: DepthMap, d_f: DepthMap, omega: PixelMask, lam: float = 1.0,
                       max_outer: int = 20, rel_tol: float = 1e-6,
                       cg_rtol: float = 1e-8, cg_maxiter: int = 5000) -> AlignmentResult:
    """Recover (alpha, s) so that alpha*D_B + s matches D_F on omega."""
    if d_b.data.shape != d_f.data.shape or d_b.data.shape != omega.data.shape:
        raise DomainError("depth maps and overlap mask must share one size")
    if lam < 0:
        raise DomainError("smoothness weight must be >= 0")
    om = omega.data
    if not om.any():
        raise DomainError("overlap mask is empty: alignment is unconstrained")

    med = float(np.median(d_f.data))
    db = d_b.data / med
    df = d_f.data / med
    h, w = db.shape
    L = grid_laplacian(h, w, wrap_u=True)
    omf = om.ravel()
    A = sp.diags(omf.astype(np.float64)) + lam * L if lam > 0 else None

    s = np.zeros_like(db)
    alpha = 1.0
    clamped = False
    s_bb = float(np.sum(db[om] ** 2))
    s_b = float(np.sum(db[om]))
    n_om = float(om.sum())
    energy = alignment_energy(db, df, om, lam, alpha, s, L)
    trace = [energy]
    outer = 0
    for outer in range(1, max_outer + 1):
        # (a) scale and a constant shift offset jointly, with the shift's shape
        # frozen. Solving only for alpha couples badly with mean(s) and stalls;
        # adding a constant to s leaves the smoothness term untouched, so this
        # is still an exact descent step with a closed form.
        r = df[om] - s[om]
        s_br = float(np.sum(db[om] * r))
        s_r = float(np.sum(r))
        det = s_bb * n_om - s_b * s_b
        if det > 1e-12 * s_bb * n_om:
            alpha = (n_om * s_br - s_b * s_r) / det
            c = (s_bb * s_r - s_b * s_br) / det
        else:  # constant D_B on omega: scale and offset are confounded
            alpha = s_br / s_bb
            c = 0.0
        if alpha <= 0:
            alpha = 1e-6
            clamped = True
            c = (s_r - alpha * s_b) / n_om
        s = s + c
        # (b) SPD solve for the shift with the scale frozen
        if lam > 0:
            b = (omf * (df - alpha * db).ravel()).astype(np.float64)
            x, _ = cg_solve(A, b, x0=s.ravel(), rtol=cg_rtol, maxiter=cg_maxiter)
            s = x.reshape(h, w)
        else:
            s = np.where(om, df - alpha * db, 0.0)
        new_energy = alignment_energy(db, df, om, lam, alpha, s, L)
        trace.append(new_energy)
        if energy - new_energy < rel_tol * max(energy, 1e-30):
            energy = new_energy
            break
        energy = new_energy

    return AlignmentResult(
        scale=alpha,
        shift=s * med,
        final_energy=energy * med * med,
        iterations=outer,
        scale_clamped=clamped,
        energies=tuple(trace),
    )


def apply_alignment(d_b: DepthMap, result: AlignmentResult, floor: float = 1e-4) -> DepthMap:
    """out = alpha * D_B + s, clamped to a positive floor."""
    if result.shift.shape != d_b.data.shape:
        raise DomainError("shift field size does not match the depth map")
    out = result.scale * d_b.data + result.shift
    return DepthMap(np.maximum(out, floor))


def save_alignment(result: AlignmentResult, shift_path, sidecar_path) -> None:
    """Persist as PFM (shift field) plus a JSON sidecar with the scalars."""
    import json

    from .images import write_pfm

    write_pfm(shift_path, result.shift)
    meta = {
        "scale": result.scale,
        "final_energy": result.final_energy,
        "iterations": result.iterations,
        "scale_clamped": result.scale_clamped,
    }
    with open(sidecar_path, "w") as f:
        json.dump(meta, f, sort_keys=True, indent=1)


def load_alignment(shift_path, sidecar_path) -> AlignmentResult:
    import json

    from .images import read_pfm

    with open(sidecar_path) as f:
        meta = json.load(f)
    return AlignmentResult(
        scale=float(meta["scale"]),
        shift=read_pfm(shift_path),
        final_energy=float(meta["final_energy"]),
        iterations=int(meta["iterations"]),
        scale_clamped=bool(meta.get("scale_clamped", False)),
    )
