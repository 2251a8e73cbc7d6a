"""Stage orchestration: panorama to composed scene, with a content-addressed
stage cache making every run resumable and byte-reproducible.

Stage order: panorama -> segment -> 2D inpaint (dilate, wrap-pad, Poisson
blend) -> depth for both panoramas -> sky + alignment -> background cloud
init -> pretune -> keyframe selection -> incremental 3D inpaint -> multiview
finetune -> per-object generation and pose -> composition.
"""

from __future__ import annotations

import hashlib
import json
import logging
import shutil
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .blend import poisson_blend
from .cloud import Sim3Transform, init_background_cloud
from .depth_align import (
    apply_alignment,
    assign_sky_depth,
    default_sky_depth,
    estimate_alignment,
    save_alignment,
)
from .disocclusion import KeyframeConfig, incremental_inpaint, select_keyframes
from .errors import ConfigError, PortError, StageError
from .images import (
    DepthMap,
    EquirectImage,
    PixelMask,
    read_mask_png,
    read_pfm,
    read_rgb_png,
    write_mask_png,
    write_pfm,
    write_rgb_png,
)
from .manifest import SceneManifest, SceneObject
from .mocks import MockContext
from .optim import (
    OptimConfig,
    finetune_schedule,
    multiview_finetune,
    pretune,
    pretune_schedule,
)
from .pano import dilate_mask, extract_perspective_crop, normals_from_depth, wrap_pad, wrap_unpad
from .placement import (
    LightConfig,
    ObjectCrop,
    PlaneConfig,
    compose_final_pose,
    compose_scene,
    detect_support_planes,
    estimate_absolute_pose,
)
from .ply import read_ply, write_ply
from .ports import PortConfig, Ports
from .render import render_perspective
from .cameras import PerspectiveCamera

log = logging.getLogger(__name__)

DILATION_REFERENCE_WIDTH = 2048
DILATION_REFERENCE_RADIUS = 8
WRAP_PAD_PIXELS = 256


@dataclass
class PipelineConfig:
    prompt: str
    output_dir: str
    cache_dir: str
    scene_id: str = "scene"
    seed: int = 0
    pano_width: int = 1024
    pano_height: int = 512
    keyframe_width: int = 512
    keyframe_height: int = 512
    upscale_factor: float = 1.0
    pretune_iterations: int = 40
    finetune_iterations: int = 24
    keyframe_count: int = 8
    keyframe_candidates: int = 96
    max_objects: int = 12
    shadow: bool = True
    strict_ports: bool = False
    backend: str | None = None
    fixture: str = "room01"
    distort_bg_depth: bool = True
    align_lambda: float = 1.0
    densify_interval: int = 200
    light_direction: tuple = (-0.3, -1.0, -0.2)
    shadow_strength: float = 0.45
    plane_point_cap: int = 150_000
    port_endpoints: dict = field(default_factory=dict)  # name -> url or "mock"

    def __post_init__(self):
        if not self.prompt:
            raise ConfigError("prompt must be non-empty")
        if self.pano_width != 2 * self.pano_height or self.pano_width < 4:
            raise ConfigError("panorama must satisfy W == 2H, W >= 4")
        for name, v in (("pretune_iterations", self.pretune_iterations),
                        ("finetune_iterations", self.finetune_iterations),
                        ("keyframe_count", self.keyframe_count)):
            if v < 0:
                raise ConfigError(f"{name} must be >= 0")
        if not self.output_dir or not self.cache_dir:
            raise ConfigError("output_dir and cache_dir are required")

    @classmethod
    def from_json_dict(cls, d: dict) -> "PipelineConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        try:
            with open(path) as f:
                data = json.load(f)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config root must be a JSON object")
        return cls.from_json_dict(data)

    def dilation_radius(self) -> int:
        return max(1, round(DILATION_REFERENCE_RADIUS * self.pano_width
                            / DILATION_REFERENCE_WIDTH))

    def wrap_pad_pixels(self) -> int:
        return min(WRAP_PAD_PIXELS, self.pano_width // 4)

    def ports(self) -> Ports:
        configs = {name: PortConfig(endpoint=url, strict=self.strict_ports)
                   for name, url in self.port_endpoints.items()}
        ctx = MockContext(fixture_name=self.fixture,
                          distort_bg_depth=self.distort_bg_depth)
        return Ports(configs, mock_context=ctx)

    def optim_config(self) -> OptimConfig:
        return OptimConfig(densify_interval=self.densify_interval, backend=self.backend)

    def light(self) -> LightConfig:
        return LightConfig(direction=np.asarray(self.light_direction, dtype=np.float64),
                           shadow_strength=self.shadow_strength if self.shadow else 0.0)


class StageCache:
    """Content-addressed stage outputs: <root>/<stage>/<hash>/artifacts.

    A directory counts as a hit only when its _ok marker exists; incomplete
    stage runs are swept away on the next attempt.
    """

    def __init__(self, root):
        self.root = Path(root)

    @staticmethod
    def key(payload: dict) -> str:
        blob = json.dumps(payload, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:24]

    def dir_for(self, stage: str, key: str) -> Path:
        return self.root / stage / key

    def hit(self, stage: str, key: str) -> bool:
        return (self.dir_for(stage, key) / "_ok").exists()

    def run(self, stage: str, key: str, producer):
        """Return the stage dir, invoking `producer(dir)` on a cache miss."""
        d = self.dir_for(stage, key)
        if self.hit(stage, key):
            log.info("stage %s: cache hit (%s)", stage, key)
            return d
        if d.exists():
            shutil.rmtree(d)
        d.mkdir(parents=True)
        try:
            producer(d)
        except PortError:
            shutil.rmtree(d, ignore_errors=True)
            raise
        except Exception as exc:
            shutil.rmtree(d, ignore_errors=True)
            raise StageError(stage, str(exc)) from exc
        (d / "_ok").touch()
        return d


@dataclass
class PipelineResult:
    manifest: SceneManifest
    manifest_path: Path
    output_dir: Path
    stage_dirs: dict


def run_pipeline(cfg: PipelineConfig) -> PipelineResult:
    ports = cfg.ports()
    cache = StageCache(cfg.cache_dir)
    out_root = Path(cfg.output_dir)
    out_root.mkdir(parents=True, exist_ok=True)
    dirs = {}

    mock_fields = {"fixture": cfg.fixture, "distort": cfg.distort_bg_depth}
    res = (cfg.pano_width, cfg.pano_height)

    # --- stage: panorama -------------------------------------------------
    k_pano = cache.key({"stage": "panorama", "prompt": cfg.prompt, "res": res,
                        "endpoint": ports.configs["panorama"].endpoint, **mock_fields})

    def _panorama(d):
        img = ports.panorama(cfg.prompt, resolution=res)
        write_rgb_png(d / "panorama.png", img.data)

    dirs["panorama"] = cache.run("panorama", k_pano, _panorama)
    pano = EquirectImage(read_rgb_png(dirs["panorama"] / "panorama.png"))

    # --- stage: segment ---------------------------------------------------
    k_seg = cache.key({"stage": "segment", "parent": k_pano,
                       "max_objects": cfg.max_objects,
                       "endpoint": ports.configs["segment"].endpoint})

    def _segment(d):
        dets = ports.segment(pano, max_objects=cfg.max_objects)
        meta = []
        for i, det in enumerate(dets):
            mask_name = f"mask_{i:02d}.png"
            write_mask_png(d / mask_name, det.mask.data)
            meta.append({"class_id": det.class_id, "description": det.description,
                         "confidence": det.confidence, "mask": mask_name})
        (d / "objects.json").write_text(json.dumps(meta, indent=1, sort_keys=True))

    dirs["segment"] = cache.run("segment", k_seg, _segment)
    seg_meta = json.loads((dirs["segment"] / "objects.json").read_text())
    detections = [
        {"class_id": m["class_id"], "description": m["description"],
         "confidence": m["confidence"],
         "mask": PixelMask(read_mask_png(dirs["segment"] / m["mask"]))}
        for m in seg_meta
    ]
    sky_mask = PixelMask(np.zeros((cfg.pano_height, cfg.pano_width), bool))
    object_dets = []
    for det in detections:
        if det["class_id"] == "sky":
            sky_mask = det["mask"]
        else:
            object_dets.append(det)

    # --- stage: 2D inpaint (erase objects from the panorama) --------------
    k_inp = cache.key({"stage": "inpaint", "parent": k_seg,
                       "radius": cfg.dilation_radius(), "pad": cfg.wrap_pad_pixels(),
                       "endpoint": ports.configs["inpaint2d"].endpoint})

    def _inpaint(d):
        radius = cfg.dilation_radius()
        union = np.zeros((cfg.pano_height, cfg.pano_width), bool)
        for det in object_dets:
            union |= dilate_mask(det["mask"], radius).data
        write_mask_png(d / "erase_mask.png", union)
        if union.any():
            pad = cfg.wrap_pad_pixels()
            padded_img = wrap_pad(pano.data, pad)
            padded_mask = PixelMask(wrap_pad(union.astype(np.uint8), pad) > 0)
            filled = ports.inpaint2d(padded_img, padded_mask)
            filled = wrap_unpad(filled, pad)
            bg = poisson_blend(filled, pano.data, PixelMask(union))
        else:
            bg = pano.data.copy()
        write_rgb_png(d / "background.png", bg)

    dirs["inpaint"] = cache.run("inpaint", k_inp, _inpaint)
    bg_pano = EquirectImage(read_rgb_png(dirs["inpaint"] / "background.png"))
    erase_mask = PixelMask(read_mask_png(dirs["inpaint"] / "erase_mask.png"))

    # --- stage: depth for both panoramas ----------------------------------
    k_depth = cache.key({"stage": "depth", "parent": k_inp,
                         "endpoint": ports.configs["depth"].endpoint, **mock_fields})

    def _depth(d):
        write_pfm(d / "depth_full.pfm", ports.depth(pano).data)
        write_pfm(d / "depth_bg.pfm", ports.depth(bg_pano).data)

    dirs["depth"] = cache.run("depth", k_depth, _depth)
    depth_full = DepthMap(read_pfm(dirs["depth"] / "depth_full.pfm"))
    depth_bg = DepthMap(read_pfm(dirs["depth"] / "depth_bg.pfm"))

    # --- stage: sky handling + alignment -----------------------------------
    k_align = cache.key({"stage": "align", "parent": k_depth, "lam": cfg.align_lambda})

    def _align(d):
        d_max = default_sky_depth(depth_full, sky_mask)
        df = assign_sky_depth(depth_full, sky_mask, d_max)
        db = assign_sky_depth(depth_bg, sky_mask, d_max)
        omega = PixelMask(~erase_mask.data & ~sky_mask.data)
        result = estimate_alignment(db, df, omega, lam=cfg.align_lambda)
        aligned = apply_alignment(db, result)
        write_pfm(d / "depth_full_sky.pfm", df.data)
        write_pfm(d / "depth_bg_aligned.pfm", aligned.data)
        save_alignment(result, d / "shift.pfm", d / "alignment.json")

    dirs["align"] = cache.run("align", k_align, _align)
    depth_full_sky = DepthMap(read_pfm(dirs["align"] / "depth_full_sky.pfm"))
    depth_bg_aligned = DepthMap(read_pfm(dirs["align"] / "depth_bg_aligned.pfm"))

    # --- stage: background cloud initialization ---------------------------
    k_init = cache.key({"stage": "init", "parent": k_align})

    def _init(d):
        normals = normals_from_depth(depth_bg_aligned)
        cloud = init_background_cloud(bg_pano, depth_bg_aligned, normals)
        write_ply(cloud, d / "init.ply")

    dirs["init"] = cache.run("init", k_init, _init)

    # --- stage: pretune ----------------------------------------------------
    k_pre = cache.key({"stage": "pretune", "parent": k_init,
                       "iters": cfg.pretune_iterations, "seed": cfg.seed,
                       "upscale": cfg.upscale_factor, "densify": cfg.densify_interval,
                       "backend": cfg.backend})

    def _pretune(d):
        cloud = read_ply(dirs["init"] / "init.ply")
        target = _upscaled_target(bg_pano, cfg.upscale_factor)
        if cfg.pretune_iterations > 0:
            sched = pretune_schedule(cfg.pretune_iterations, seed=cfg.seed)
            result = pretune(cloud, target, sched, cfg.optim_config())
            cloud = result.cloud
            _write_loss_csv(d / "loss.csv", result.loss_history)
            (d / "view_stats.json").write_text(json.dumps(result.view_stats))
        write_ply(cloud, d / "pretuned.ply")

    dirs["pretune"] = cache.run("pretune", k_pre, _pretune)

    # --- stage: keyframes ---------------------------------------------------
    k_kf = cache.key({"stage": "keyframes", "parent": k_pre,
                      "count": cfg.keyframe_count, "candidates": cfg.keyframe_candidates,
                      "kw": cfg.keyframe_width, "kh": cfg.keyframe_height,
                      "seed": cfg.seed})

    def _keyframes(d):
        cloud = read_ply(dirs["pretune"] / "pretuned.ply")
        kf_cfg = KeyframeConfig(count=cfg.keyframe_count,
                                candidate_count=cfg.keyframe_candidates,
                                seed=cfg.seed, width=cfg.keyframe_width,
                                height=cfg.keyframe_height)
        kfs = select_keyframes(cloud, kf_cfg)
        (d / "keyframes.json").write_text(json.dumps(
            [{"camera": kf.camera.to_json_dict(), "score": kf.score, "index": kf.index}
             for kf in kfs], indent=1, sort_keys=True))

    dirs["keyframes"] = cache.run("keyframes", k_kf, _keyframes)

    # --- stage: incremental 3D inpainting ----------------------------------
    k_3d = cache.key({"stage": "inpaint3d", "parent": k_kf,
                      "endpoint": ports.configs["inpaint2d"].endpoint,
                      "depth_endpoint": ports.configs["depth_inpaint"].endpoint})

    def _inpaint3d(d):
        from .disocclusion import Keyframe

        cloud = read_ply(dirs["pretune"] / "pretuned.ply")
        kf_meta = json.loads((dirs["keyframes"] / "keyframes.json").read_text())
        kfs = [Keyframe(camera=PerspectiveCamera.from_json_dict(m["camera"]),
                        score=m["score"], index=m["index"]) for m in kf_meta]
        cloud, supervision = incremental_inpaint(
            cloud, kfs, ports.inpaint2d, ports.depth_inpaint,
            artifact_dir=d / "keyframes", strict=cfg.strict_ports)
        write_ply(cloud, d / "grown.ply")
        (d / "supervision.json").write_text(json.dumps(
            [{"camera": cam.to_json_dict(),
              "image": f"keyframes/kf{_kf_index(kfs, cam):02d}_inpainted.png",
              "mask": f"keyframes/kf{_kf_index(kfs, cam):02d}_mask.png"}
             for cam, _, _ in supervision], indent=1, sort_keys=True))

    dirs["inpaint3d"] = cache.run("inpaint3d", k_3d, _inpaint3d)

    # --- stage: multiview finetune -----------------------------------------
    k_ft = cache.key({"stage": "finetune", "parent": k_3d,
                      "iters": cfg.finetune_iterations, "seed": cfg.seed,
                      "sds": ports.configs["sds"].endpoint, "backend": cfg.backend})

    def _finetune(d):
        cloud = read_ply(dirs["inpaint3d"] / "grown.ply")
        sup_meta = json.loads((dirs["inpaint3d"] / "supervision.json").read_text())
        supervision = [
            (PerspectiveCamera.from_json_dict(m["camera"]),
             read_rgb_png(dirs["inpaint3d"] / m["image"]),
             PixelMask(read_mask_png(dirs["inpaint3d"] / m["mask"])))
            for m in sup_meta
        ]
        target = _upscaled_target(bg_pano, cfg.upscale_factor)
        if cfg.finetune_iterations > 0:
            sched = finetune_schedule(cfg.finetune_iterations, seed=cfg.seed + 1)
            result = multiview_finetune(cloud, target, supervision, sched,
                                        cfg.optim_config(), sds_port=ports.sds,
                                        strict_ports=cfg.strict_ports)
            cloud = result.cloud
            _write_loss_csv(d / "loss.csv", result.loss_history)
        write_ply(cloud, d / "background.ply")

    dirs["finetune"] = cache.run("finetune", k_ft, _finetune)

    # --- stage: objects ------------------------------------------------------
    k_obj = cache.key({"stage": "objects", "parent": k_ft,
                       "gen": ports.configs["object_gen"].endpoint,
                       "rank": ports.configs["rank"].endpoint,
                       "pose": ports.configs["pose_match"].endpoint,
                       "seed": cfg.seed})

    def _objects(d):
        entries = []
        for i, det in enumerate(object_dets):
            entry = _generate_object(d, i, det, pano, depth_full_sky, ports, cfg)
            entries.append(entry)
        (d / "objects.json").write_text(json.dumps(entries, indent=1, sort_keys=True))

    dirs["objects"] = cache.run("objects", k_obj, _objects)

    # --- stage: compose --------------------------------------------------------
    k_comp = cache.key({"stage": "compose", "parent": k_obj, "shadow": cfg.shadow,
                        "strength": cfg.shadow_strength,
                        "light": list(cfg.light_direction),
                        "plane_cap": cfg.plane_point_cap, "seed": cfg.seed})

    def _compose(d):
        background = read_ply(dirs["finetune"] / "background.ply")
        obj_meta = json.loads((dirs["objects"] / "objects.json").read_text())
        objects = []
        for m in obj_meta:
            cloud = read_ply(dirs["objects"] / m["ply"])
            objects.append((m["id"], m["label"], cloud,
                            Sim3Transform.from_json_dict(m["transform"])))
        planes = detect_support_planes(
            background, PlaneConfig(seed=cfg.seed, point_cap=cfg.plane_point_cap)) \
            if len(background) >= 100 else []
        light = cfg.light()
        snapped, _, merged = compose_scene(background, objects, planes, light)

        write_ply(background, d / "background.ply")
        write_ply(merged, d / "merged.ply")
        scene_objects = []
        for (obj_id, label, cloud, t), m in zip(snapped, obj_meta):
            name = f"objects/{obj_id}.ply"
            (d / "objects").mkdir(exist_ok=True)
            write_ply(cloud, d / name)
            lo = cloud.positions.min(axis=0) if len(cloud) else np.zeros(3)
            hi = cloud.positions.max(axis=0) if len(cloud) else np.zeros(3)
            scene_objects.append(SceneObject(object_id=obj_id, label=label, ply=name,
                                             transform=t, mask_id=m.get("mask_id"),
                                             bbox=(tuple(lo), tuple(hi))))
        manifest = SceneManifest(scene_id=cfg.scene_id, background="background.ply",
                                 objects=scene_objects, planes=planes, light=light,
                                 merged="merged.ply")
        manifest.save(d / "manifest.json")

    dirs["compose"] = cache.run("compose", k_comp, _compose)

    # --- publish the output tree -------------------------------------------
    _publish(out_root, dirs)
    manifest = SceneManifest.load(out_root / "manifest.json")
    return PipelineResult(manifest=manifest, manifest_path=out_root / "manifest.json",
                          output_dir=out_root, stage_dirs=dirs)


def _kf_index(kfs, cam):
    for kf in kfs:
        if np.array_equal(kf.camera.t, cam.t) and np.array_equal(kf.camera.R, cam.R):
            return kf.index
    raise KeyError("camera not among keyframes")


def _upscaled_target(bg_pano: EquirectImage, factor: float) -> np.ndarray:
    if factor == 1.0:
        return bg_pano.data
    from .pano import sample_equirect

    h = int(round(bg_pano.height * factor))
    w = 2 * h
    jj, ii = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    u = (ii + 0.5) * bg_pano.width / w - 0.5
    v = (jj + 0.5) * bg_pano.height / h - 0.5
    return sample_equirect(bg_pano.data, u, np.clip(v, 0, bg_pano.height - 1))


def _write_loss_csv(path, history):
    import csv

    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["iteration", "loss"])
        writer.writerows(history)


def _generate_object(stage_dir: Path, index: int, det: dict, pano: EquirectImage,
                     depth_full: DepthMap, ports: Ports, cfg: PipelineConfig) -> dict:
    mask: PixelMask = det["mask"]
    ys, xs = np.nonzero(mask.data)
    depths = depth_full.data[ys, xs]
    crop = ObjectCrop(mask=mask, label=det["class_id"], description=det["description"],
                      mean_depth=float(depths.mean()),
                      bbox=(int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max())))
    absolute = estimate_absolute_pose(crop, (pano.width, pano.height))

    # perspective crop of the object for the generation ports
    from .placement import mask_centroid
    from .pano import pixel_to_direction

    cu, cv = mask_centroid(mask)
    direction = pixel_to_direction(cu, cv, pano.width, pano.height)
    u0, v0, u1, v1 = crop.bbox
    extent = max((u1 - u0 + 1) * 2 * np.pi / pano.width,
                 (v1 - v0 + 1) * np.pi / pano.height)
    fov = float(np.degrees(min(extent * 1.6, 2.0)))
    cam = PerspectiveCamera.looking_at((0, 0, 0), direction, max(fov, 10.0), 192, 192)
    crop_img = extract_perspective_crop(pano, cam)
    partial_depth = np.where(mask.data, depth_full.data, 0.0)

    candidates = [ports.object_gen(crop_img, det["description"], style_image=crop_img,
                                   partial_depth=partial_depth, seed=cfg.seed * 100 + k)
                  for k in range(5)]
    views = [_candidate_view(c, backend=cfg.backend) for c in candidates]
    chosen_idx = ports.rank(views, crop_img)
    chosen = candidates[chosen_idx]
    relative = ports.pose_match(crop_img, views[chosen_idx])
    final = compose_final_pose(absolute, relative)

    obj_id = f"obj{index:02d}_{det['class_id']}"
    name = f"{obj_id}.ply"
    write_ply(chosen, stage_dir / name)
    write_rgb_png(stage_dir / f"{obj_id}_crop.png", crop_img)
    return {"id": obj_id, "label": det["class_id"], "ply": name,
            "transform": final.to_json_dict(), "mask_id": f"mask_{index:02d}",
            "candidate": chosen_idx}


def _candidate_view(cloud, size: int = 64, backend=None) -> np.ndarray:
    cam = PerspectiveCamera.looking_at((0.0, 0.0, 2.2), (0.0, 0.0, -1.0), 40.0,
                                       size, size)
    return render_perspective(cloud, cam, backend=backend).color


def _publish(out_root: Path, dirs: dict) -> None:
    """Copy the user-facing artifacts into the output directory."""
    copies = [
        (dirs["panorama"] / "panorama.png", "panorama.png"),
        (dirs["inpaint"] / "background.png", "background_pano.png"),
        (dirs["align"] / "depth_full_sky.pfm", "depth_full.pfm"),
        (dirs["align"] / "depth_bg_aligned.pfm", "depth_bg_aligned.pfm"),
        (dirs["compose"] / "background.ply", "background.ply"),
        (dirs["compose"] / "merged.ply", "merged.ply"),
        (dirs["compose"] / "manifest.json", "manifest.json"),
    ]
    for src, dst in copies:
        shutil.copyfile(src, out_root / dst)
    obj_src = dirs["compose"] / "objects"
    obj_dst = out_root / "objects"
    if obj_dst.exists():
        shutil.rmtree(obj_dst)
    if obj_src.exists():
        shutil.copytree(obj_src, obj_dst)
