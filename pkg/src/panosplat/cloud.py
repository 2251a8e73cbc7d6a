"""3D Gaussian splat cloud: data model, similarity transforms, construction.

Storage follows the de facto 3DGS layout: anisotropic scales as logs,
opacity as a logit, color as spherical-harmonic DC coefficients
(rgb = SH_C0 * dc + 0.5). Rotations are unit quaternions (w, x, y, z).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cameras import quat_multiply, quat_to_rot
from .errors import DomainError
from .images import DepthMap, EquirectImage
from .pano import pixel_to_direction

SH_C0 = 0.28209479177387814

DEFAULT_OPACITY = 0.95
TIGHT_SCALE_FACTOR = 1.0     # k_tight: tangential sigma = depth * (pi/W) * k_tight
NORMAL_SIGMA_RATIO = 0.1     # sigma along the normal relative to tangential


def rgb_to_dc(rgb: np.ndarray) -> np.ndarray:
    return (np.asarray(rgb, dtype=np.float64) - 0.5) / SH_C0


def dc_to_rgb(dc: np.ndarray) -> np.ndarray:
    return np.asarray(dc, dtype=np.float64) * SH_C0 + 0.5


def logit(p: float) -> float:
    return float(np.log(p / (1.0 - p)))


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=np.float64)))


@dataclass
class SplatCloud:
    """Struct-of-arrays Gaussian collection; float64 in memory, float32 on disk."""

    positions: np.ndarray        # (N, 3) meters
    rotations: np.ndarray        # (N, 4) unit quaternions, (w, x, y, z)
    log_scales: np.ndarray       # (N, 3) log standard deviations, meters
    logit_opacities: np.ndarray  # (N,)
    dc: np.ndarray               # (N, 3) DC color coefficients
    normals: np.ndarray | None = None    # (N, 3) PLY nx/ny/nz payload
    f_rest: np.ndarray | None = None     # (N, K) higher-order color, carried opaque
    extras: dict = field(default_factory=dict)  # unknown PLY properties, name -> array

    def __post_init__(self):
        self.positions = np.ascontiguousarray(self.positions, dtype=np.float64).reshape(-1, 3)
        n = len(self.positions)
        self.rotations = np.ascontiguousarray(self.rotations, dtype=np.float64).reshape(n, 4)
        self.log_scales = np.ascontiguousarray(self.log_scales, dtype=np.float64).reshape(n, 3)
        self.logit_opacities = np.ascontiguousarray(self.logit_opacities, dtype=np.float64).reshape(n)
        self.dc = np.ascontiguousarray(self.dc, dtype=np.float64).reshape(n, 3)
        if self.normals is None:
            self.normals = np.zeros((n, 3), dtype=np.float64)
        else:
            self.normals = np.ascontiguousarray(self.normals, dtype=np.float64).reshape(n, 3)
        if self.f_rest is not None:
            self.f_rest = np.ascontiguousarray(self.f_rest, dtype=np.float64).reshape(n, -1)
        self.validate()

    def validate(self):
        if not np.all(np.isfinite(self.positions)):
            raise DomainError("positions must be finite")
        if len(self.rotations) and np.abs(np.linalg.norm(self.rotations, axis=1) - 1.0).max() > 1e-6:
            raise DomainError("rotations must be unit quaternions (within 1e-6)")
        if not np.all(np.isfinite(self.log_scales)):
            raise DomainError("log scales must be finite")
        if not np.all(np.isfinite(self.logit_opacities)):
            raise DomainError("opacity logits must be finite")

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def count(self) -> int:
        return len(self.positions)

    def copy(self) -> "SplatCloud":
        return SplatCloud(
            positions=self.positions.copy(),
            rotations=self.rotations.copy(),
            log_scales=self.log_scales.copy(),
            logit_opacities=self.logit_opacities.copy(),
            dc=self.dc.copy(),
            normals=self.normals.copy(),
            f_rest=None if self.f_rest is None else self.f_rest.copy(),
            extras={k: v.copy() for k, v in self.extras.items()},
        )

    def opacities(self) -> np.ndarray:
        return sigmoid(self.logit_opacities)

    def colors(self) -> np.ndarray:
        """Evaluated view-independent RGB (may stray outside [0,1] mid-optimization)."""
        return dc_to_rgb(self.dc)

    def scene_extent(self) -> float:
        """Radius used to scale position learning rates: max distance from the centroid."""
        if len(self) == 0:
            return 1.0
        c = self.positions.mean(axis=0)
        return float(max(np.linalg.norm(self.positions - c, axis=1).max(), 1e-6))

    @staticmethod
    def empty() -> "SplatCloud":
        return SplatCloud(
            positions=np.zeros((0, 3)),
            rotations=np.zeros((0, 4)),
            log_scales=np.zeros((0, 3)),
            logit_opacities=np.zeros(0),
            dc=np.zeros((0, 3)),
        )


@dataclass(frozen=True)
class Sim3Transform:
    """Similarity transform applying scale, then rotation, then translation."""

    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    scale: float = 1.0

    def __post_init__(self):
        q = np.asarray(self.rotation, dtype=np.float64).reshape(4)
        n = np.linalg.norm(q)
        if abs(n - 1.0) > 1e-6:
            raise DomainError("Sim3 rotation must be a unit quaternion")
        if not (self.scale > 0 and np.isfinite(self.scale)):
            raise DomainError("Sim3 uniform scale must be positive and finite")
        object.__setattr__(self, "rotation", q / n)
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64).reshape(3))
        object.__setattr__(self, "scale", float(self.scale))

    @staticmethod
    def identity() -> "Sim3Transform":
        return Sim3Transform()

    def rot_matrix(self) -> np.ndarray:
        return quat_to_rot(self.rotation)

    def apply_points(self, pts: np.ndarray) -> np.ndarray:
        return (self.scale * np.asarray(pts, dtype=np.float64)) @ self.rot_matrix().T + self.translation

    def compose(self, other: "Sim3Transform") -> "Sim3Transform":
        """self o other: apply `other` first, then `self`."""
        q = quat_multiply(self.rotation, other.rotation)
        q = q / np.linalg.norm(q)
        t = self.scale * (self.rot_matrix() @ other.translation) + self.translation
        return Sim3Transform(rotation=q, translation=t, scale=self.scale * other.scale)

    def inverse(self) -> "Sim3Transform":
        qi = self.rotation * np.array([1.0, -1.0, -1.0, -1.0])
        Ri = self.rot_matrix().T
        return Sim3Transform(
            rotation=qi / np.linalg.norm(qi),
            translation=-(Ri @ self.translation) / self.scale,
            scale=1.0 / self.scale,
        )

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.scale * self.rot_matrix()
        m[:3, 3] = self.translation
        return m

    def to_json_dict(self) -> dict:
        return {
            "t": [float(v) for v in self.translation],
            "q": [float(v) for v in self.rotation],
            "s": float(self.scale),
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "Sim3Transform":
        return cls(rotation=np.asarray(d["q"], dtype=np.float64),
                   translation=np.asarray(d["t"], dtype=np.float64),
                   scale=float(d["s"]))


def transform_cloud(cloud: SplatCloud, t: Sim3Transform) -> SplatCloud:
    """Map a cloud through a similarity: covariances rotate, scales multiply.

    Opacity and color are untouched (DC is view-independent; any higher-order
    coefficients ride along verbatim and are approximate under rotation).
    """
    R = t.rot_matrix()
    out = cloud.copy()
    out.positions = t.apply_points(cloud.positions)
    if len(cloud):
        out.rotations = quat_multiply(t.rotation, cloud.rotations)
        out.rotations /= np.linalg.norm(out.rotations, axis=1, keepdims=True)
    out.log_scales = cloud.log_scales + np.log(t.scale)
    out.normals = cloud.normals @ R.T
    return out


def merge_clouds(entries) -> SplatCloud:
    """Concatenate (cloud, transform) pairs into one cloud."""
    entries = list(entries)
    if not entries:
        raise DomainError("merge_clouds needs at least one input")
    transformed = [transform_cloud(c, t) for c, t in entries]
    rest_width = max((c.f_rest.shape[1] for c in transformed if c.f_rest is not None), default=0)

    def rest_of(c):
        if rest_width == 0:
            return None
        r = np.zeros((len(c), rest_width))
        if c.f_rest is not None:
            r[:, : c.f_rest.shape[1]] = c.f_rest
        return r

    rests = [rest_of(c) for c in transformed]
    shared = set(transformed[0].extras)
    for c in transformed[1:]:
        shared &= set(c.extras)
    return SplatCloud(
        positions=np.concatenate([c.positions for c in transformed]),
        rotations=np.concatenate([c.rotations for c in transformed]),
        log_scales=np.concatenate([c.log_scales for c in transformed]),
        logit_opacities=np.concatenate([c.logit_opacities for c in transformed]),
        dc=np.concatenate([c.dc for c in transformed]),
        normals=np.concatenate([c.normals for c in transformed]),
        f_rest=None if rest_width == 0 else np.concatenate([r for r in rests]),
        extras={k: np.concatenate([c.extras[k] for c in transformed]) for k in sorted(shared)},
    )


def quats_from_normal_frames(normals: np.ndarray) -> np.ndarray:
    """Batch quaternions whose third local axis equals each given unit normal."""
    n = np.asarray(normals, dtype=np.float64).reshape(-1, 3)
    helper = np.where(np.abs(n[:, 1:2]) < 0.9, [[0.0, 1.0, 0.0]], [[1.0, 0.0, 0.0]])
    t1 = np.cross(helper, n)
    t1 /= np.linalg.norm(t1, axis=1, keepdims=True)
    t2 = np.cross(n, t1)
    R = np.stack([t1, t2, n], axis=2)  # columns = local axes
    return rot_to_quat_batch(R)


def rot_to_quat_batch(R: np.ndarray) -> np.ndarray:
    """Vectorized rotation-matrix-to-quaternion, (N,3,3) -> (N,4) with w >= 0.

    Builds all four numerically-safe constructions and keeps, per row, the
    one anchored at the largest of (1+tr, 1+2*R_ii-tr).
    """
    R = np.asarray(R, dtype=np.float64)
    m00, m01, m02 = R[:, 0, 0], R[:, 0, 1], R[:, 0, 2]
    m10, m11, m12 = R[:, 1, 0], R[:, 1, 1], R[:, 1, 2]
    m20, m21, m22 = R[:, 2, 0], R[:, 2, 1], R[:, 2, 2]
    qw2 = np.maximum(1.0 + m00 + m11 + m22, 0.0)
    qx2 = np.maximum(1.0 + m00 - m11 - m22, 0.0)
    qy2 = np.maximum(1.0 - m00 + m11 - m22, 0.0)
    qz2 = np.maximum(1.0 - m00 - m11 + m22, 0.0)
    sw = 2.0 * np.sqrt(qw2) + 1e-30
    sx = 2.0 * np.sqrt(qx2) + 1e-30
    sy = 2.0 * np.sqrt(qy2) + 1e-30
    sz = 2.0 * np.sqrt(qz2) + 1e-30
    cand = np.stack(
        [
            np.stack([0.25 * sw, (m21 - m12) / sw, (m02 - m20) / sw, (m10 - m01) / sw], 1),
            np.stack([(m21 - m12) / sx, 0.25 * sx, (m01 + m10) / sx, (m02 + m20) / sx], 1),
            np.stack([(m02 - m20) / sy, (m01 + m10) / sy, 0.25 * sy, (m12 + m21) / sy], 1),
            np.stack([(m10 - m01) / sz, (m02 + m20) / sz, (m12 + m21) / sz, 0.25 * sz], 1),
        ],
        axis=0,
    )
    pick = np.argmax(np.stack([qw2, qx2, qy2, qz2], 0), axis=0)
    q = cand[pick, np.arange(len(pick))]
    q = np.where(q[:, :1] < 0, -q, q)
    return q / np.linalg.norm(q, axis=1, keepdims=True)


def init_background_cloud(rgb: EquirectImage, depth: DepthMap, normals: np.ndarray,
                          k_tight: float = TIGHT_SCALE_FACTOR,
                          opacity: float = DEFAULT_OPACITY) -> SplatCloud:
    """Pixel-tight background initialization: one Gaussian per panorama pixel.

    Position is the unprojected pixel; tangential sigma covers the pixel's
    angular footprint (depth * pi/W * k_tight), the normal axis is squashed
    to a tenth of that, and the local frame's third axis follows the pixel
    normal so discs lie flat on the reconstructed surface.
    """
    h, w = rgb.height, rgb.width
    if depth.data.shape != (h, w) or np.asarray(normals).shape != (h, w, 3):
        raise DomainError("rgb, depth and normals must share one resolution")
    jj, ii = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    dirs = pixel_to_direction(ii, jj, w, h).reshape(-1, 3)
    d = depth.data.reshape(-1)
    positions = dirs * d[:, None]
    sigma_t = d * (np.pi / w) * k_tight
    sigma_n = sigma_t * NORMAL_SIGMA_RATIO
    log_scales = np.log(np.stack([sigma_t, sigma_t, sigma_n], axis=1))
    rotations = quats_from_normal_frames(np.asarray(normals, dtype=np.float64).reshape(-1, 3))
    return SplatCloud(
        positions=positions,
        rotations=rotations,
        log_scales=log_scales,
        logit_opacities=np.full(h * w, logit(opacity)),
        dc=rgb_to_dc(rgb.data.reshape(-1, 3)),
    )
