"""Object placement: absolute pose from panorama crops, support-plane
detection and snapping, the splat-aware shadow pass, and final composition.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .cloud import Sim3Transform, SplatCloud, merge_clouds, transform_cloud
from .errors import DomainError
from .images import PixelMask
from .pano import pixel_to_direction

log = logging.getLogger(__name__)

FLOOR = "FLOOR"
WALL = "WALL"
OTHER = "OTHER"

SNAP_BAND_FRACTION = 0.10   # snap when the gap is within this fraction of height
HORIZONTAL_TOL_DEG = 15.0


@dataclass(frozen=True)
class ObjectCrop:
    mask: PixelMask             # on the panorama
    label: str
    description: str
    mean_depth: float           # meters, over the mask
    bbox: tuple                 # (u0, v0, u1, v1) inclusive panorama pixels

    def __post_init__(self):
        if self.mask.area() == 0:
            raise DomainError("object crop mask is empty")
        if self.mean_depth <= 0:
            raise DomainError("object crop needs positive mean depth")


@dataclass(frozen=True)
class SupportPlane:
    normal: np.ndarray          # unit; plane is n . x = d
    d: float
    inlier_count: int
    kind: str = OTHER

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=np.float64).reshape(3)
        nn = np.linalg.norm(n)
        if abs(nn - 1.0) > 1e-6:
            raise DomainError("plane normal must be unit length")
        object.__setattr__(self, "normal", n / nn)

    def to_json_dict(self):
        return {"n": [float(v) for v in self.normal], "d": float(self.d),
                "kind": self.kind, "inliers": int(self.inlier_count)}

    @classmethod
    def from_json_dict(cls, dd):
        return cls(normal=np.asarray(dd["n"], dtype=np.float64), d=float(dd["d"]),
                   inlier_count=int(dd.get("inliers", 0)), kind=dd.get("kind", OTHER))


@dataclass(frozen=True)
class LightConfig:
    direction: np.ndarray = field(
        default_factory=lambda: np.array([-0.3, -1.0, -0.2]) / np.linalg.norm([-0.3, -1.0, -0.2]))
    shadow_strength: float = 0.45
    shadow_map_resolution: int = 256
    depth_bias_frac: float = 0.02

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=np.float64).reshape(3)
        n = np.linalg.norm(d)
        if n == 0:
            raise DomainError("light direction must be nonzero")
        if abs(n - 1.0) > 1e-12:  # keep already-unit vectors bit-stable
            d = d / n
        object.__setattr__(self, "direction", d)
        if not 0.0 <= self.shadow_strength <= 1.0:
            raise DomainError("shadow strength must lie in [0, 1]")

    def to_json_dict(self):
        return {"dir": [float(v) for v in self.direction],
                "shadow_strength": float(self.shadow_strength),
                "shadow_map_resolution": int(self.shadow_map_resolution),
                "depth_bias_frac": float(self.depth_bias_frac)}

    @classmethod
    def from_json_dict(cls, dd):
        return cls(direction=np.asarray(dd["dir"], dtype=np.float64),
                   shadow_strength=float(dd["shadow_strength"]),
                   shadow_map_resolution=int(dd.get("shadow_map_resolution", 256)),
                   depth_bias_frac=float(dd.get("depth_bias_frac", 0.02)))


def mask_centroid(mask: PixelMask):
    """Mask centroid in panorama pixels; circular mean along u (wrap-aware)."""
    ys, xs = np.nonzero(mask.data)
    w = mask.width
    ang = 2 * np.pi * (xs + 0.5) / w
    mean_ang = np.arctan2(np.sin(ang).mean(), np.cos(ang).mean())
    u = (mean_ang / (2 * np.pi)) * w - 0.5
    return float(np.mod(u, w)), float(ys.mean())


def estimate_absolute_pose(crop: ObjectCrop, pano_size) -> Sim3Transform:
    """Coarse but panorama-consistent pose for a segmented object.

    Translation pushes the mask centroid along its viewing ray to the mean
    depth; rotation is yaw-only with the object's +Z facing back at the
    origin; uniform scale is mean depth times the crop's angular extent.
    """
    w, h = int(pano_size[0]), int(pano_size[1])
    cu, cv = mask_centroid(crop.mask)
    direction = pixel_to_direction(cu, cv, w, h)
    translation = crop.mean_depth * direction

    yaw = np.arctan2(-direction[0], -direction[2])
    q = np.array([np.cos(yaw / 2), 0.0, np.sin(yaw / 2), 0.0])

    u0, v0, u1, v1 = crop.bbox
    extent = max((u1 - u0 + 1) * 2 * np.pi / w, (v1 - v0 + 1) * np.pi / h)
    return Sim3Transform(rotation=q, translation=translation,
                         scale=crop.mean_depth * extent)


def compose_final_pose(absolute: Sim3Transform, relative: Sim3Transform) -> Sim3Transform:
    """Final pose = absolute o relative (relative maps the generated object's
    canonical frame into the crop's frame)."""
    return absolute.compose(relative)


@dataclass(frozen=True)
class PlaneConfig:
    iterations: int = 2000
    inlier_tol: float | None = None   # default 0.01 x scene extent
    min_inlier_frac: float = 0.05
    seed: int = 0
    max_planes: int = 8
    point_cap: int = 200_000


def _fit_plane_lsq(points):
    centroid = points.mean(axis=0)
    u, s, vt = np.linalg.svd(points - centroid, full_matrices=False)
    n = vt[-1]
    n = n / np.linalg.norm(n)
    return n, float(n @ centroid)


def detect_support_planes(cloud: SplatCloud, config: PlaneConfig = PlaneConfig()):
    """Sequential RANSAC over splat positions, deterministic under the seed.

    Each round fits the plane with the most inliers (ties break toward the
    lower hypothesis index), refits it by least squares, removes its inliers
    and repeats until the best plane drops below min_inlier_frac of the
    original point count. Classification: the lowest up-facing plane is the
    floor; near-vertical planes are walls.
    """
    if len(cloud) < 100:
        raise DomainError("plane detection needs at least 100 splats")
    rng = np.random.default_rng(config.seed)
    pts = cloud.positions
    if len(pts) > config.point_cap:
        pick = rng.choice(len(pts), size=config.point_cap, replace=False)
        pts = pts[pick]
    n_total = len(pts)
    centroid = pts.mean(axis=0)
    extent = max(float(np.linalg.norm(pts - centroid, axis=1).max()), 1e-6)
    tol = config.inlier_tol if config.inlier_tol is not None else 0.01 * extent

    remaining = np.arange(n_total)
    raw_planes = []
    while len(raw_planes) < config.max_planes and len(remaining) >= 3:
        tri = rng.integers(0, len(remaining), size=(config.iterations, 3))
        p0 = pts[remaining[tri[:, 0]]]
        p1 = pts[remaining[tri[:, 1]]]
        p2 = pts[remaining[tri[:, 2]]]
        n = np.cross(p1 - p0, p2 - p0)
        norms = np.linalg.norm(n, axis=1)
        ok = norms > 1e-12
        n[ok] /= norms[ok, None]
        d = np.einsum("ij,ij->i", n, p0)

        best_count, best_i = -1, -1
        sub = pts[remaining]
        for start in range(0, config.iterations, 256):
            block = slice(start, min(start + 256, config.iterations))
            dist = np.abs(sub @ n[block].T - d[block])
            counts = (dist < tol).sum(axis=0)
            counts[~ok[block]] = -1
            bi = int(np.argmax(counts))
            if counts[bi] > best_count:
                best_count = int(counts[bi])
                best_i = start + bi
        if best_count < config.min_inlier_frac * n_total:
            break
        dist = np.abs(sub @ n[best_i] - d[best_i])
        inliers = remaining[dist < tol]
        nn, dd = _fit_plane_lsq(pts[inliers])
        # refit can shift membership slightly; recount on the refit plane
        dist_all = np.abs(pts[remaining] @ nn - dd)
        inliers = remaining[dist_all < tol]
        if len(inliers) < 3:
            break
        raw_planes.append((nn, dd, len(inliers)))
        mask = np.ones(len(remaining), dtype=bool)
        mask[dist_all < tol] = False
        remaining = remaining[mask]

    return classify_planes(raw_planes)


def classify_planes(raw_planes):
    """Orient and label (normal, d, count) triples as FLOOR / WALL / OTHER."""
    horiz_cos = np.cos(np.radians(HORIZONTAL_TOL_DEG))
    wall_sin = np.sin(np.radians(HORIZONTAL_TOL_DEG))
    oriented = []
    for n, d, count in raw_planes:
        if n[1] < 0:  # make horizontal-ish normals face up
            n, d = -n, -d
        oriented.append([n, d, count, OTHER])
    floor_idx, floor_d = -1, np.inf
    for i, (n, d, count, _) in enumerate(oriented):
        if n[1] >= horiz_cos and d < floor_d:
            floor_idx, floor_d = i, d
    for i, entry in enumerate(oriented):
        n = entry[0]
        if i == floor_idx:
            entry[3] = FLOOR
        elif abs(n[1]) <= wall_sin:
            entry[3] = WALL
    return [SupportPlane(normal=n, d=d, inlier_count=count, kind=kind)
            for n, d, count, kind in oriented]


def _object_span(cloud: SplatCloud, transform: Sim3Transform, normal: np.ndarray):
    """(lowest point, highest point) of the placed object along `normal`,
    padded by one dominant-scale sigma per splat."""
    pts = transform.apply_points(cloud.positions)
    sigma = transform.scale * np.exp(cloud.log_scales.max(axis=1))
    proj = pts @ normal
    return float((proj - sigma).min()), float((proj + sigma).max())


def snap_to_plane(obj: tuple, planes) -> Sim3Transform:
    """Close small gaps between an object and its support plane.

    `obj` is (SplatCloud, Sim3Transform). If the signed gap between the
    object's lowest extent and the floor plane is within +-10% of the
    object's height, translate along the floor normal to close it exactly;
    otherwise try the nearest wall the same way. At most one plane is used,
    and only the translation changes.
    """
    cloud, transform = obj
    if len(cloud) == 0 or not planes:
        return transform
    floor = next((p for p in planes if p.kind == FLOOR), None)
    if floor is not None:
        low, high = _object_span(cloud, transform, floor.normal)
        height = max(high - low, 1e-12)
        gap = low - floor.d
        if abs(gap) <= SNAP_BAND_FRACTION * height:
            return Sim3Transform(rotation=transform.rotation,
                                 translation=transform.translation - gap * floor.normal,
                                 scale=transform.scale)
    centroid = transform.apply_points(cloud.positions).mean(axis=0)
    best = None
    for p in planes:
        if p.kind != WALL:
            continue
        n, d = p.normal, p.d
        if n @ centroid - d < 0:
            n, d = -n, -d
        low, high = _object_span(cloud, transform, n)
        extent = max(high - low, 1e-12)
        gap = low - d
        if abs(gap) <= SNAP_BAND_FRACTION * extent and (best is None or abs(gap) < abs(best[0])):
            best = (gap, n)
    if best is not None:
        gap, n = best
        return Sim3Transform(rotation=transform.rotation,
                             translation=transform.translation - gap * n,
                             scale=transform.scale)
    return transform


def shadow_pass(background: SplatCloud, objects, light: LightConfig) -> SplatCloud:
    """Splat-aware shadow mapping: render an orthographic depth map of the
    object splats along the light direction and darken occluded background
    splats' DC color by (1 - strength * soft), soft being the 3x3 PCF
    occlusion fraction. Non-destructive; object splats are never modulated.
    """
    out = background.copy()
    placed = [o for o in objects if len(o)]
    if not placed or light.shadow_strength == 0.0 or len(background) == 0:
        return out

    f = light.direction
    up = np.array([0.0, 1.0, 0.0]) if abs(f[1]) < 0.99 else np.array([1.0, 0.0, 0.0])
    r = np.cross(up, f)
    r /= np.linalg.norm(r)
    u = np.cross(f, r)

    obj_pts = np.concatenate([o.positions for o in placed])
    obj_sigma = np.concatenate([np.exp(o.log_scales.max(axis=1)) for o in placed])
    a = obj_pts @ r
    b = obj_pts @ u
    c = obj_pts @ f
    a0, a1 = float((a - obj_sigma).min()), float((a + obj_sigma).max())
    b0, b1 = float((b - obj_sigma).min()), float((b + obj_sigma).max())
    span = max(a1 - a0, b1 - b0, 1e-9)

    res = light.shadow_map_resolution
    depth_map = np.full((res, res), np.inf)
    scale = (res - 1) / span
    ia = (a - a0) * scale
    ib = (b - b0) * scale
    rad = np.maximum(obj_sigma * scale, 0.5)
    for i in range(len(obj_pts)):
        x0 = max(int(np.floor(ia[i] - rad[i])), 0)
        x1 = min(int(np.ceil(ia[i] + rad[i])), res - 1)
        y0 = max(int(np.floor(ib[i] - rad[i])), 0)
        y1 = min(int(np.ceil(ib[i] + rad[i])), res - 1)
        if x1 < x0 or y1 < y0:
            continue
        yy, xx = np.ogrid[y0:y1 + 1, x0:x1 + 1]
        disc = (xx - ia[i]) ** 2 + (yy - ib[i]) ** 2 <= rad[i] ** 2
        region = depth_map[y0:y1 + 1, x0:x1 + 1]
        np.minimum(region, np.where(disc, c[i], np.inf), out=region)

    bg = background.positions
    ba = np.clip(np.round((bg @ r - a0) * scale), 0, res - 1).astype(np.int64)
    bb = np.clip(np.round((bg @ u - b0) * scale), 0, res - 1).astype(np.int64)
    bc = bg @ f
    c_depth = max(float(c.max() - c.min()), 1e-9)
    bias = light.depth_bias_frac * c_depth

    inside = (bg @ r >= a0 - 1e-9) & (bg @ r <= a1 + 1e-9) & \
             (bg @ u >= b0 - 1e-9) & (bg @ u <= b1 + 1e-9)
    soft = np.zeros(len(bg))
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            ty = np.clip(bb + dy, 0, res - 1)
            tx = np.clip(ba + dx, 0, res - 1)
            texel = depth_map[ty, tx]
            soft += np.where(np.isfinite(texel) & (bc > texel + bias), 1.0, 0.0)
    soft = np.where(inside, soft / 9.0, 0.0)

    out.dc = background.dc * (1.0 - light.shadow_strength * soft)[:, None]
    return out


def compose_scene(background: SplatCloud, objects, planes, light: LightConfig):
    """Snap each object, run the shadow pass once, and merge.

    `objects` is a list of (object_id, label, cloud, transform). Returns
    (entries with post-snap transforms, shadowed background, merged cloud).
    """
    snapped = []
    for obj_id, label, cloud, transform in objects:
        t = snap_to_plane((cloud, transform), planes)
        snapped.append((obj_id, label, cloud, t))
    shadowed = shadow_pass(background, [transform_cloud(c, t) for _, _, c, t in snapped],
                           light)
    merged = merge_clouds([(shadowed, Sim3Transform.identity())]
                          + [(c, t) for _, _, c, t in snapped])
    return snapped, shadowed, merged
