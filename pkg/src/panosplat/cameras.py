"""Perspective pinhole camera with a rigid camera-to-world pose.

Camera frame: +X right, +Y up, +Z forward (right-handed, det(R) = +1).
Continuous pixel coordinates put the center of integer pixel (i, j) at
(i, j); a camera-space point (x, y, z) with z > 0 projects to
u = cx + fx*x/z - 0.5, v = cy - fy*y/z - 0.5 in those coordinates, i.e.
cx, cy are measured in the usual [0, w] x [0, h] continuous frame.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError


def quat_to_rot(q: np.ndarray) -> np.ndarray:
    """Rotation matrix from a (w, x, y, z) quaternion (normalized internally)."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def rot_to_quat(R: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) from a rotation matrix; w >= 0."""
    R = np.asarray(R, dtype=np.float64)
    t = np.trace(R)
    if t > 0:
        s = math.sqrt(t + 1.0) * 2
        q = np.array([0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s])
    else:
        i = int(np.argmax(np.diag(R)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = math.sqrt(max(R[i, i] - R[j, j] - R[k, k] + 1.0, 0.0)) * 2
        q = np.empty(4)
        q[0] = (R[k, j] - R[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (R[j, i] + R[i, j]) / s
        q[1 + k] = (R[k, i] + R[i, k]) / s
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a*b for (w, x, y, z) quaternions; supports batched b."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


@dataclass(frozen=True)
class PerspectiveCamera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    R: np.ndarray = field(default_factory=lambda: np.eye(3))  # camera -> world
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "R", np.asarray(self.R, dtype=np.float64).reshape(3, 3))
        object.__setattr__(self, "t", np.asarray(self.t, dtype=np.float64).reshape(3))
        if self.fx <= 0 or self.fy <= 0:
            raise DomainError("focal lengths must be positive")
        if not (0 < self.cx < self.width) or not (0 < self.cy < self.height):
            raise DomainError("principal point must lie inside the image")
        RtR = self.R.T @ self.R
        if np.abs(RtR - np.eye(3)).max() > 1e-9 or abs(np.linalg.det(self.R) - 1.0) > 1e-9:
            raise DomainError("camera rotation must be orthonormal with det +1")

    @classmethod
    def from_fov(cls, fov_x_deg: float, width: int, height: int, R=None, t=None) -> "PerspectiveCamera":
        f = 0.5 * width / math.tan(math.radians(fov_x_deg) / 2.0)
        kwargs = {}
        if R is not None:
            kwargs["R"] = R
        if t is not None:
            kwargs["t"] = t
        return cls(fx=f, fy=f, cx=width / 2.0, cy=height / 2.0, width=width, height=height, **kwargs)

    @classmethod
    def looking_at(cls, position, forward, fov_x_deg: float, width: int, height: int,
                   up=(0.0, 1.0, 0.0)) -> "PerspectiveCamera":
        """Camera at `position` looking along `forward` with image-up near `up`."""
        f = np.asarray(forward, dtype=np.float64)
        n = np.linalg.norm(f)
        if n == 0:
            raise DomainError("forward direction must be nonzero")
        f = f / n
        u = np.asarray(up, dtype=np.float64)
        u = u - f * (u @ f)
        if np.linalg.norm(u) < 1e-9:  # forward parallel to up: pick a stable fallback
            u = np.array([0.0, 0.0, -1.0 if f[1] > 0 else 1.0])
            u = u - f * (u @ f)
        u = u / np.linalg.norm(u)
        r = np.cross(u, f)
        R = np.stack([r, u, f], axis=1)
        return cls.from_fov(fov_x_deg, width, height, R=R, t=np.asarray(position, dtype=np.float64))

    def pixel_rays(self) -> np.ndarray:
        """Unit world-space ray directions for all pixel centers, shape (H, W, 3)."""
        j, i = np.meshgrid(np.arange(self.height), np.arange(self.width), indexing="ij")
        x = (i + 0.5 - self.cx) / self.fx
        y = (self.cy - (j + 0.5)) / self.fy
        d = np.stack([x, y, np.ones_like(x)], axis=-1)
        d /= np.linalg.norm(d, axis=-1, keepdims=True)
        return d @ self.R.T

    def unproject(self, px: np.ndarray, py: np.ndarray, z: np.ndarray) -> np.ndarray:
        """World points for continuous pixel coords at forward depth z (meters)."""
        x = (np.asarray(px) + 0.5 - self.cx) / self.fx * z
        y = (self.cy - (np.asarray(py) + 0.5)) / self.fy * z
        pc = np.stack([x, y, np.broadcast_to(z, x.shape)], axis=-1)
        return pc @ self.R.T + self.t

    def world_to_cam(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.t) @ self.R

    def to_json_dict(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "q": [float(v) for v in rot_to_quat(self.R)],
            "t": [float(v) for v in self.t],
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "PerspectiveCamera":
        return cls(
            fx=float(d["fx"]),
            fy=float(d["fy"]),
            cx=float(d["cx"]),
            cy=float(d["cy"]),
            width=int(d["width"]),
            height=int(d["height"]),
            R=quat_to_rot(np.asarray(d["q"], dtype=np.float64)),
            t=np.asarray(d["t"], dtype=np.float64),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, s: str) -> "PerspectiveCamera":
        return cls.from_json_dict(json.loads(s))


# Cube-face cameras used for equirect rendering: forward axis and image-up
# per face, in a fixed order (+Z, +X, -Z, -X, +Y, -Y).
_CUBE_FACES = [
    ((0, 0, 1), (0, 1, 0)),
    ((1, 0, 0), (0, 1, 0)),
    ((0, 0, -1), (0, 1, 0)),
    ((-1, 0, 0), (0, 1, 0)),
    ((0, 1, 0), (0, 0, -1)),
    ((0, -1, 0), (0, 0, 1)),
]


def cube_face_cameras(face_res: int, origin=(0.0, 0.0, 0.0)) -> list[PerspectiveCamera]:
    """Six 90-degree-FOV cameras covering the sphere from `origin`."""
    cams = []
    for fwd, up in _CUBE_FACES:
        f = np.asarray(fwd, dtype=np.float64)
        u = np.asarray(up, dtype=np.float64)
        r = np.cross(u, f)
        R = np.stack([r, u, f], axis=1)
        cams.append(
            PerspectiveCamera(
                fx=face_res / 2.0,
                fy=face_res / 2.0,
                cx=face_res / 2.0,
                cy=face_res / 2.0,
                width=face_res,
                height=face_res,
                R=R,
                t=np.asarray(origin, dtype=np.float64),
            )
        )
    return cams
