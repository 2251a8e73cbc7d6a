import numpy as np
import pytest

from panosplat.cloud import Sim3Transform, SplatCloud, rgb_to_dc
from panosplat.errors import DomainError
from panosplat.images import PixelMask
from panosplat.placement import (
    FLOOR,
    WALL,
    LightConfig,
    ObjectCrop,
    PlaneConfig,
    SupportPlane,
    compose_final_pose,
    compose_scene,
    detect_support_planes,
    estimate_absolute_pose,
    shadow_pass,
    snap_to_plane,
)
from tests.test_cloud import random_sim3


def crop_with_mask(w, h, u0, v0, u1, v1, depth=3.0):
    m = np.zeros((h, w), bool)
    m[v0:v1 + 1, u0:u1 + 1] = True
    return ObjectCrop(mask=PixelMask(m), label="thing", description="a thing",
                      mean_depth=depth, bbox=(u0, v0, u1, v1))


class TestAbsolutePose:
    def test_center_crop_faces_origin(self):
        w, h = 256, 128
        crop = crop_with_mask(w, h, 126, 62, 129, 65, depth=3.0)
        t = estimate_absolute_pose(crop, (w, h))
        assert np.abs(t.translation - [0, 0, 3.0]).max() < 0.1
        fwd = t.rot_matrix()[:, 2]
        assert fwd[2] < -0.99  # object +Z points back toward the origin

    def test_plus_x_crop(self):
        w, h = 256, 128
        u = 3 * w // 4 - 1
        crop = crop_with_mask(w, h, u - 1, 62, u + 1, 65, depth=2.0)
        t = estimate_absolute_pose(crop, (w, h))
        assert np.abs(t.translation - [2.0, 0, 0]).max() < 0.1

    def test_translation_norm_equals_mean_depth(self):
        w, h = 128, 64
        for seed in range(5):
            rng = np.random.default_rng(seed)
            u0 = int(rng.integers(0, w - 6))
            v0 = int(rng.integers(10, h - 16))
            crop = crop_with_mask(w, h, u0, v0, u0 + 5, v0 + 5,
                                  depth=float(rng.uniform(1, 8)))
            t = estimate_absolute_pose(crop, (w, h))
            assert np.linalg.norm(t.translation) == pytest.approx(crop.mean_depth, abs=1e-9)

    def test_scale_from_angular_extent(self):
        w, h = 360, 180  # 1 px per degree on u
        px = round(np.degrees(0.2))  # bbox spanning ~0.2 rad
        crop = crop_with_mask(w, h, 100, 80, 100 + px - 1, 82, depth=5.0)
        t = estimate_absolute_pose(crop, (w, h))
        assert t.scale == pytest.approx(1.0, rel=0.05)

    def test_seam_spanning_mask_centroid(self):
        w, h = 128, 64
        m = np.zeros((h, w), bool)
        m[30:34, :3] = True
        m[30:34, -3:] = True
        crop = ObjectCrop(mask=PixelMask(m), label="x", description="", mean_depth=2.0,
                          bbox=(125, 30, 130, 33))
        t = estimate_absolute_pose(crop, (w, h))
        # centroid sits on the -Z meridian (the seam), not at +Z
        assert t.translation[2] < -1.8


class TestComposePose:
    def test_identity_relative(self):
        a = random_sim3(1)
        assert np.abs(compose_final_pose(a, Sim3Transform.identity()).matrix()
                      - a.matrix()).max() < 1e-12

    def test_pure_yaw_relative(self):
        a = Sim3Transform(translation=np.array([1.0, 0, 2.0]))
        yaw = np.pi / 2
        rel = Sim3Transform(rotation=np.array([np.cos(yaw / 2), 0, np.sin(yaw / 2), 0]))
        out = compose_final_pose(a, rel)
        assert np.allclose(out.translation, a.translation)
        assert np.abs(out.rot_matrix() - rel.rot_matrix()).max() < 1e-9

    def test_matrix_oracle(self):
        for seed in range(10):
            a, b = random_sim3(seed), random_sim3(seed + 50)
            assert np.abs(compose_final_pose(a, b).matrix()
                          - a.matrix() @ b.matrix()).max() < 1e-9


def plane_cloud(points, seed=0):
    rng = np.random.default_rng(seed)
    n = len(points)
    q = rng.standard_normal((n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return SplatCloud(
        positions=points,
        rotations=q,
        log_scales=np.full((n, 3), -3.0),
        logit_opacities=np.full(n, 2.0),
        dc=rgb_to_dc(rng.uniform(0.2, 0.8, (n, 3))),
    )


def box_room_points(n_per_face=400, seed=1, noise=0.0):
    rng = np.random.default_rng(seed)
    faces = []
    for axis, lo, hi in ((0, -3.0, 3.0), (1, -1.5, 2.0), (2, -4.0, 4.0)):
        for val in (lo, hi):
            pts = np.empty((n_per_face, 3))
            others = [a for a in range(3) if a != axis]
            pts[:, others[0]] = rng.uniform(-2.5, 2.5, n_per_face)
            pts[:, others[1]] = rng.uniform(-2.5, 2.5, n_per_face)
            pts[:, axis] = val + noise * rng.standard_normal(n_per_face)
            faces.append(pts)
    return np.concatenate(faces)


class TestPlanes:
    def test_box_room_recovers_planes(self):
        cloud = plane_cloud(box_room_points())
        planes = detect_support_planes(cloud, PlaneConfig(seed=2))
        assert len(planes) >= 5
        floor = [p for p in planes if p.kind == FLOOR]
        assert len(floor) == 1
        angle = np.degrees(np.arccos(np.clip(floor[0].normal[1], -1, 1)))
        assert angle < 2.0
        assert floor[0].d == pytest.approx(-1.5, abs=0.05)
        walls = [p for p in planes if p.kind == WALL]
        assert len(walls) >= 3

    def test_noisy_floor_offset(self):
        rng = np.random.default_rng(3)
        pts = np.empty((2000, 3))
        pts[:, 0] = rng.uniform(-3, 3, 2000)
        pts[:, 2] = rng.uniform(-3, 3, 2000)
        pts[:, 1] = -1.0 + 0.002 * rng.standard_normal(2000)
        cloud = plane_cloud(pts)
        planes = detect_support_planes(cloud, PlaneConfig(seed=4, inlier_tol=0.01))
        assert len(planes) == 1
        assert abs(planes[0].d - (-1.0)) < 3 * 0.002

    def test_uniform_ball_finds_nothing(self):
        rng = np.random.default_rng(5)
        v = rng.standard_normal((100, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        pts = v * rng.uniform(0, 1, 100)[:, None] ** (1 / 3)
        cloud = plane_cloud(pts)
        planes = detect_support_planes(cloud, PlaneConfig(seed=6, min_inlier_frac=0.3))
        assert planes == []

    def test_deterministic(self):
        cloud = plane_cloud(box_room_points(seed=7))
        a = detect_support_planes(cloud, PlaneConfig(seed=8))
        b = detect_support_planes(cloud, PlaneConfig(seed=8))
        assert len(a) == len(b)
        for pa, pb in zip(a, b):
            assert np.array_equal(pa.normal, pb.normal)
            assert pa.d == pb.d


def small_object(seed=0):
    rng = np.random.default_rng(seed)
    n = 60
    q = np.tile([1.0, 0, 0, 0], (n, 1))
    pts = rng.uniform(-0.5, 0.5, (n, 3))
    return SplatCloud(
        positions=pts,
        rotations=q,
        log_scales=np.full((n, 3), -3.0),
        logit_opacities=np.full(n, 2.0),
        dc=np.zeros((n, 3)),
    )


FLOOR_PLANE = SupportPlane(normal=np.array([0.0, 1.0, 0.0]), d=-1.5,
                           inlier_count=1000, kind=FLOOR)


class TestSnap:
    def test_small_gap_closes_exactly(self):
        obj = small_object()
        low, high = obj.positions[:, 1].min() - np.exp(-3.0), obj.positions[:, 1].max() + np.exp(-3.0)
        height = high - low
        gap = 0.05 * height
        t = Sim3Transform(translation=np.array([0.0, -1.5 - low + gap, 0.0]))
        snapped = snap_to_plane((obj, t), [FLOOR_PLANE])
        new_low = (snapped.apply_points(obj.positions)[:, 1]
                   - np.exp(obj.log_scales.max(axis=1)) * snapped.scale).min()
        assert abs(new_low - (-1.5)) < 1e-9
        assert np.array_equal(snapped.rotation, t.rotation)
        assert snapped.scale == t.scale
        assert snapped.translation[0] == t.translation[0]
        assert snapped.translation[2] == t.translation[2]

    def test_large_gap_unchanged(self):
        obj = small_object()
        t = Sim3Transform(translation=np.array([0.0, 1.0, 0.0]))
        snapped = snap_to_plane((obj, t), [FLOOR_PLANE])
        assert np.array_equal(snapped.translation, t.translation)

    def test_idempotent(self):
        for seed in range(6):
            obj = small_object(seed)
            rng = np.random.default_rng(seed + 10)
            t = Sim3Transform(translation=np.array([0.0, rng.uniform(-1.6, -0.2), 0.0]),
                              scale=float(rng.uniform(0.5, 1.5)))
            once = snap_to_plane((obj, t), [FLOOR_PLANE])
            twice = snap_to_plane((obj, once), [FLOOR_PLANE])
            assert np.abs(twice.translation - once.translation).max() < 1e-9

    def test_no_planes_noop(self):
        obj = small_object()
        t = Sim3Transform()
        assert snap_to_plane((obj, t), []) is t


class TestShadow:
    def floor_cloud(self):
        xs, zs = np.meshgrid(np.linspace(-3, 3, 40), np.linspace(-3, 3, 40))
        pts = np.stack([xs.ravel(), np.full(1600, -1.5), zs.ravel()], axis=1)
        return plane_cloud(pts, seed=11)

    def box_object_above(self):
        rng = np.random.default_rng(12)
        pts = rng.uniform(-0.4, 0.4, (800, 3))
        pts[:, 1] = rng.uniform(-0.2, 0.6, 800)  # box hovering above the floor
        return plane_cloud(pts, seed=13)

    def test_no_objects_identity(self):
        bg = self.floor_cloud()
        out = shadow_pass(bg, [], LightConfig())
        assert np.array_equal(out.dc, bg.dc)

    def test_zero_strength_identity(self):
        bg = self.floor_cloud()
        out = shadow_pass(bg, [self.box_object_above()], LightConfig(shadow_strength=0.0))
        assert np.array_equal(out.dc, bg.dc)

    def test_footprint_darkened(self):
        bg = self.floor_cloud()
        obj = self.box_object_above()
        light = LightConfig(direction=np.array([0.0, -1.0, 0.0]), shadow_strength=0.45)
        out = shadow_pass(bg, [obj], light)
        ratio = np.where(np.abs(bg.dc[:, 0]) > 1e-9, out.dc[:, 0] / bg.dc[:, 0], 1.0)
        inside = (np.abs(bg.positions[:, 0]) < 0.3) & (np.abs(bg.positions[:, 2]) < 0.3)
        outside = (np.abs(bg.positions[:, 0]) > 1.2) | (np.abs(bg.positions[:, 2]) > 1.2)
        assert np.allclose(ratio[inside], 0.55, atol=0.02)
        assert np.allclose(ratio[outside], 1.0, atol=1e-12)

    def test_only_dc_changes_multiplicatively(self):
        bg = self.floor_cloud()
        obj = self.box_object_above()
        light = LightConfig(direction=np.array([0.0, -1.0, 0.0]), shadow_strength=0.7)
        out = shadow_pass(bg, [obj], light)
        assert np.array_equal(out.positions, bg.positions)
        assert np.array_equal(out.log_scales, bg.log_scales)
        assert np.array_equal(out.logit_opacities, bg.logit_opacities)
        with np.errstate(invalid="ignore", divide="ignore"):
            ratio = out.dc / bg.dc
        ratio = ratio[np.isfinite(ratio)]
        assert ratio.min() >= 1 - 0.7 - 1e-9
        assert ratio.max() <= 1 + 1e-9


class TestComposeScene:
    def test_zero_objects(self):
        bg = plane_cloud(box_room_points(seed=20))
        snapped, shadowed, merged = compose_scene(bg, [], [FLOOR_PLANE], LightConfig())
        assert snapped == []
        assert len(merged) == len(bg)
        assert np.array_equal(merged.dc, bg.dc)

    def test_one_object_counts(self):
        bg = plane_cloud(box_room_points(seed=21))
        obj = small_object(2)
        t = Sim3Transform(translation=np.array([0.5, 0.0, 0.5]))
        snapped, _, merged = compose_scene(bg, [("o1", "crate", obj, t)],
                                           [FLOOR_PLANE], LightConfig())
        assert len(merged) == len(bg) + len(obj)
        assert snapped[0][0] == "o1"


def test_crop_invariants():
    with pytest.raises(DomainError):
        ObjectCrop(mask=PixelMask(np.zeros((4, 8), bool)), label="x", description="",
                   mean_depth=1.0, bbox=(0, 0, 1, 1))
    with pytest.raises(DomainError):
        crop_with_mask(8, 4, 0, 0, 1, 1, depth=-1.0)
