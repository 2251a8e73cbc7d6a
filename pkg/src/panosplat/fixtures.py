"""Procedural test scenes, rendered analytically per pixel.

The room fixture is a closed box with smoothly shaded walls and three
palette-keyed objects (box / sphere / cylinder). Object colors are flat and
unique so the mock segmentation port can recover ground-truth masks from
the image alone. Everything is a pure function of (name, resolution).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError
from .images import DepthMap, EquirectImage, PixelMask
from .pano import pixel_to_direction

# Palette keys: flat object colors the mock segmenter recognizes.
OBJECT_PALETTE = {
    "crate": (0.85, 0.12, 0.10),
    "ball": (0.10, 0.80, 0.15),
    "pillar": (0.15, 0.20, 0.85),
}

ROOM = {
    "x": (-3.0, 3.0),
    "y": (-1.5, 2.0),
    "z": (-4.0, 4.0),
}


@dataclass
class FixtureObject:
    label: str
    color: tuple
    mask: PixelMask
    description: str


@dataclass
class SceneFixture:
    name: str
    panorama: EquirectImage          # full scene I_F
    depth: DepthMap                  # D_F (ground truth)
    bg_panorama: EquirectImage       # scene without objects (ideal I_B)
    bg_depth: DepthMap               # D_B ground truth
    objects: list = field(default_factory=list)
    sky: PixelMask | None = None

    @property
    def width(self):
        return self.panorama.width

    @property
    def height(self):
        return self.panorama.height


def _ray_box_interior(dirs):
    """Exit distance of rays from the room interior (origin inside)."""
    t = np.full(dirs.shape[:-1], np.inf)
    hit_axis = np.zeros(dirs.shape[:-1], dtype=np.int64)
    for axis, key in enumerate("xyz"):
        lo, hi = ROOM[key]
        d = dirs[..., axis]
        with np.errstate(divide="ignore"):
            ti = np.where(d > 0, hi / np.maximum(d, 1e-300),
                          np.where(d < 0, lo / np.minimum(d, -1e-300), np.inf))
        closer = ti < t
        t = np.where(closer, ti, t)
        hit_axis = np.where(closer, axis, hit_axis)
    return t, hit_axis


def _room_color(points, hit_axis, dirs):
    """Smooth wall shading: per-face base hue plus low-frequency variation."""
    x, y, z = points[..., 0], points[..., 1], points[..., 2]
    col = np.zeros(points.shape)
    face = hit_axis * 2 + (np.take_along_axis(
        dirs, hit_axis[..., None], axis=-1)[..., 0] > 0)
    bases = {
        0: (0.45, 0.38, 0.34),  # -x wall
        1: (0.38, 0.42, 0.46),  # +x wall
        2: (0.35, 0.30, 0.26),  # floor
        3: (0.70, 0.70, 0.72),  # ceiling
        4: (0.47, 0.43, 0.33),  # -z wall
        5: (0.40, 0.46, 0.38),  # +z wall
    }
    wave = 0.08 * np.sin(1.3 * x + 0.9 * z) + 0.06 * np.cos(1.1 * y + 0.7 * x)
    for f, base in bases.items():
        m = face == f
        for c in range(3):
            col[..., c][m] = base[c] + wave[m] * (0.7 + 0.3 * c / 2)
    return np.clip(col, 0.02, 0.98)


def _ray_sphere(dirs, center, radius):
    b = dirs @ np.asarray(center)
    disc = b * b - (np.dot(center, center) - radius * radius)
    ok = (disc > 0) & (b > 0)
    t = np.where(ok, b - np.sqrt(np.maximum(disc, 0)), np.inf)
    return np.where(t > 0, t, np.inf)


def _ray_aabb(dirs, lo, hi):
    t0 = np.full(dirs.shape[:-1], -np.inf)
    t1 = np.full(dirs.shape[:-1], np.inf)
    for a in range(3):
        d = dirs[..., a]
        inv = 1.0 / np.where(np.abs(d) > 1e-12, d, 1e-12)
        ta = lo[a] * inv
        tb = hi[a] * inv
        t0 = np.maximum(t0, np.minimum(ta, tb))
        t1 = np.minimum(t1, np.maximum(ta, tb))
    hit = (t1 >= t0) & (t0 > 0)
    return np.where(hit, t0, np.inf)


def _ray_cylinder(dirs, cx, cz, radius, y0, y1):
    dx, dy, dz = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    a = dx * dx + dz * dz
    b = -2.0 * (dx * cx + dz * cz)
    c0 = cx * cx + cz * cz - radius * radius
    disc = b * b - 4 * a * c0
    ok = (disc > 0) & (a > 1e-12)
    sq = np.sqrt(np.maximum(disc, 0))
    t = np.where(ok, (-b - sq) / (2 * np.maximum(a, 1e-12)), np.inf)
    yhit = t * dy
    t = np.where((t > 0) & (yhit >= y0) & (yhit <= y1), t, np.inf)
    # top cap (visible from the origin above the cylinder)
    with np.errstate(divide="ignore", invalid="ignore"):
        tc = np.where(dy != 0, y1 / dy, np.inf)
    cap_ok = (tc > 0) & ((tc * dx - cx) ** 2 + (tc * dz - cz) ** 2 <= radius * radius)
    tc = np.where(cap_ok, tc, np.inf)
    return np.minimum(t, tc)


_OBJECT_GEOMETRY = {
    "crate": lambda dirs: _ray_aabb(dirs, np.array([-1.7, -1.5, 1.4]),
                                    np.array([-0.9, -0.7, 2.2])),
    "ball": lambda dirs: _ray_sphere(dirs, np.array([1.4, -0.6, 2.2]), 0.5),
    "pillar": lambda dirs: _ray_cylinder(dirs, 0.2, -2.3, 0.35, -1.5, -0.4),
}

_OBJECT_DESCRIPTIONS = {
    "crate": "a matte red storage crate resting on the floor",
    "ball": "a bright green ball floating near the wall",
    "pillar": "a blue cylindrical pillar standing on the floor",
}


def room_scene(width: int = 512, height: int = 256, name: str = "room01") -> SceneFixture:
    """The standard closed-room fixture with three palette-keyed objects."""
    if width != 2 * height:
        raise DomainError("fixture panoramas need W == 2H")
    jj, ii = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    dirs = pixel_to_direction(ii, jj, width, height)

    t_room, hit_axis = _ray_box_interior(dirs)
    bg_color = _room_color(dirs * t_room[..., None], hit_axis, dirs)
    bg_depth = t_room

    color = bg_color.copy()
    depth = bg_depth.copy()
    objects = []
    t_best = np.full((height, width), np.inf)
    owner = np.full((height, width), -1)
    labels = list(_OBJECT_GEOMETRY)
    for k, label in enumerate(labels):
        t_obj = _OBJECT_GEOMETRY[label](dirs)
        closer = (t_obj < t_best) & (t_obj < t_room)
        t_best = np.where(closer, t_obj, t_best)
        owner = np.where(closer, k, owner)
    for k, label in enumerate(labels):
        m = owner == k
        color[m] = OBJECT_PALETTE[label]
        depth[m] = t_best[m]
        objects.append(FixtureObject(
            label=label, color=OBJECT_PALETTE[label], mask=PixelMask(m),
            description=_OBJECT_DESCRIPTIONS[label]))

    return SceneFixture(
        name=name,
        panorama=EquirectImage(color),
        depth=DepthMap(depth),
        bg_panorama=EquirectImage(bg_color),
        bg_depth=DepthMap(bg_depth),
        objects=objects,
        sky=PixelMask(np.zeros((height, width), dtype=bool)),
    )


def two_plane_scene(width: int = 256, height: int = 128) -> SceneFixture:
    """A back wall plus a right-offset occluder: the band hidden behind the
    occluder is visible only from camera positions left of the origin."""
    if width != 2 * height:
        raise DomainError("fixture panoramas need W == 2H")
    jj, ii = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    dirs = pixel_to_direction(ii, jj, width, height)

    t_room, hit_axis = _ray_box_interior(dirs)
    bg_color = _room_color(dirs * t_room[..., None], hit_axis, dirs)
    bg_depth = t_room

    # occluder: full-height wall segment at z = 2 running from x = 0.35 to the
    # right wall, so the band hidden behind it is revealed only from the left
    occ = _ray_aabb(dirs, np.array([0.35, -1.5, 1.95]), np.array([3.0, 2.0, 2.05]))
    m = occ < t_room
    color = bg_color.copy()
    depth = bg_depth.copy()
    color[m] = (0.55, 0.25, 0.45)
    depth[m] = occ[m]
    return SceneFixture(
        name="twoplane",
        panorama=EquirectImage(color),
        depth=DepthMap(depth),
        bg_panorama=EquirectImage(bg_color),
        bg_depth=DepthMap(bg_depth),
        objects=[],
        sky=PixelMask(np.zeros((height, width), dtype=bool)),
    )


_GENERATORS = {
    "room01": room_scene,
    "twoplane": two_plane_scene,
}


def generate(name: str, width: int = 512, height: int = 256) -> SceneFixture:
    if name not in _GENERATORS:
        raise DomainError(f"unknown fixture {name!r}; known: {sorted(_GENERATORS)}")
    return _GENERATORS[name](width, height)


def fixture_names():
    return sorted(_GENERATORS)
