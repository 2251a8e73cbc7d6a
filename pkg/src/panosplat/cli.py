"""Command-line surface.

Subcommands: run, compose, snap, render, serve, fixtures gen.
Exit codes: 0 ok, 2 config error, 3 port failure, 4 stage failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError, DomainError, PortError, StageError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PORT = 3
EXIT_STAGE = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="panosplat",
                                     description="panoramic RGBD to composed splat scenes")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--strict-ports", action="store_true",
                        help="port failures abort instead of being skipped")
    parser.add_argument("--cache-dir", default=None, help="override the stage cache dir")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute the full pipeline")
    p_run.add_argument("--config", required=True)

    p_comp = sub.add_parser("compose", help="recompose a scene from its manifest")
    p_comp.add_argument("--manifest", required=True)

    p_snap = sub.add_parser("snap", help="snap one object to its support plane")
    p_snap.add_argument("--manifest", required=True)
    p_snap.add_argument("--object", required=True)

    p_render = sub.add_parser("render", help="render the composed scene to a PNG")
    p_render.add_argument("--manifest", required=True)
    p_render.add_argument("--cam", required=True, help="camera JSON (string or @file)")
    p_render.add_argument("--out", required=True)

    p_serve = sub.add_parser("serve", help="serve the scene for the editor")
    p_serve.add_argument("--manifest", required=True)
    p_serve.add_argument("--port", type=int, default=8790)
    p_serve.add_argument("--static", default=None, help="also serve this directory at /")

    p_fix = sub.add_parser("fixtures", help="procedural test scenes")
    fix_sub = p_fix.add_subparsers(dest="fixture_command", required=True)
    p_gen = fix_sub.add_parser("gen", help="emit a procedural fixture")
    p_gen.add_argument("--name", required=True)
    p_gen.add_argument("--out", required=True)
    p_gen.add_argument("--width", type=int, default=512)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PortError as exc:
        print(f"port failure: {exc}", file=sys.stderr)
        return EXIT_PORT
    except StageError as exc:
        print(f"{exc}", file=sys.stderr)
        return EXIT_STAGE
    except DomainError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def _dispatch(args) -> int:
    if args.command == "run":
        return _cmd_run(args)
    if args.command == "compose":
        return _cmd_compose(args)
    if args.command == "snap":
        return _cmd_snap(args)
    if args.command == "render":
        return _cmd_render(args)
    if args.command == "serve":
        return _cmd_serve(args)
    if args.command == "fixtures":
        return _cmd_fixtures(args)
    raise ConfigError(f"unknown command {args.command}")


def _cmd_run(args) -> int:
    from .pipeline import PipelineConfig, run_pipeline

    cfg = PipelineConfig.load(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.cache_dir is not None:
        overrides["cache_dir"] = args.cache_dir
    if args.strict_ports:
        overrides["strict_ports"] = True
    if overrides:
        from dataclasses import replace

        cfg = replace(cfg, **overrides)
    result = run_pipeline(cfg)
    print(result.manifest_path)
    return EXIT_OK


def _load_state(manifest_path):
    from .server import SceneState

    if not Path(manifest_path).exists():
        raise ConfigError(f"manifest not found: {manifest_path}")
    return SceneState(manifest_path)


def _cmd_compose(args) -> int:
    state = _load_state(args.manifest)
    state.recompose()
    print(state.manifest_path)
    return EXIT_OK


def _cmd_snap(args) -> int:
    state = _load_state(args.manifest)
    try:
        t = state.snap(args.object)
    except KeyError:
        raise ConfigError(f"unknown object {args.object!r}")
    print(json.dumps(t.to_json_dict(), sort_keys=True))
    return EXIT_OK


def _cmd_render(args) -> int:
    from .cameras import PerspectiveCamera
    from .images import write_rgb_png
    from .render import render_perspective

    state = _load_state(args.manifest)
    cam_text = args.cam
    if cam_text.startswith("@"):
        cam_text = Path(cam_text[1:]).read_text()
    try:
        cam = PerspectiveCamera.from_json(cam_text)
    except (json.JSONDecodeError, KeyError) as exc:
        raise ConfigError(f"invalid camera JSON: {exc}")
    out = render_perspective(state.merged_cloud(), cam)
    write_rgb_png(args.out, out.color)
    print(args.out)
    return EXIT_OK


def _cmd_serve(args) -> int:
    from .server import serve

    server = serve(args.manifest, args.port, static_dir=args.static)
    print(f"serving {args.manifest} on http://127.0.0.1:{args.port}", file=sys.stderr)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return EXIT_OK


def _cmd_fixtures(args) -> int:
    from .fixtures import generate
    from .images import write_mask_png, write_pfm, write_rgb_png

    out = Path(args.out)
    if args.width % 2:
        raise ConfigError("fixture width must be even")
    if args.name == "scene_small":
        _emit_small_scene(out, args.width)
        print(out)
        return EXIT_OK
    fx = generate(args.name, args.width, args.width // 2)
    out.mkdir(parents=True, exist_ok=True)
    write_rgb_png(out / "panorama.png", fx.panorama.data)
    write_pfm(out / "depth.pfm", fx.depth.data)
    write_rgb_png(out / "background.png", fx.bg_panorama.data)
    write_pfm(out / "bg_depth.pfm", fx.bg_depth.data)
    meta = {"name": fx.name, "width": fx.width, "height": fx.height, "objects": []}
    for i, obj in enumerate(fx.objects):
        mask_name = f"mask_{i:02d}_{obj.label}.png"
        write_mask_png(out / mask_name, obj.mask.data)
        meta["objects"].append({"label": obj.label, "mask": mask_name,
                                "description": obj.description})
    (out / "meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True))
    print(out)
    return EXIT_OK


def _emit_small_scene(out: Path, width: int) -> None:
    """A composed three-object scene (manifest + PLYs), ready to serve."""
    import numpy as np

    from .cloud import init_background_cloud
    from .fixtures import room_scene
    from .manifest import SceneManifest, SceneObject
    from .mocks import mock_object_gen
    from .pano import normals_from_depth
    from .placement import (
        LightConfig,
        ObjectCrop,
        PlaneConfig,
        compose_scene,
        detect_support_planes,
        estimate_absolute_pose,
    )
    from .ply import write_ply

    fx = room_scene(width, width // 2)
    background = init_background_cloud(fx.bg_panorama, fx.bg_depth,
                                       normals_from_depth(fx.bg_depth))
    objects = []
    for i, obj in enumerate(fx.objects):
        ys, xs = np.nonzero(obj.mask.data)
        crop = ObjectCrop(mask=obj.mask, label=obj.label, description=obj.description,
                          mean_depth=float(fx.depth.data[ys, xs].mean()),
                          bbox=(int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max())))
        pose = estimate_absolute_pose(crop, (fx.width, fx.height))
        cloud = mock_object_gen(np.full((32, 32, 3), obj.color), obj.description, seed=i,
                                count=1200)
        objects.append((f"obj{i:02d}_{obj.label}", obj.label, cloud, pose))

    planes = detect_support_planes(background, PlaneConfig(seed=1, point_cap=30000))
    light = LightConfig()
    snapped, _, merged = compose_scene(background, objects, planes, light)

    out.mkdir(parents=True, exist_ok=True)
    (out / "objects").mkdir(exist_ok=True)
    write_ply(background, out / "background.ply")
    write_ply(merged, out / "merged.ply")
    scene_objects = []
    for obj_id, label, cloud, t in snapped:
        write_ply(cloud, out / "objects" / f"{obj_id}.ply")
        lo, hi = cloud.positions.min(axis=0), cloud.positions.max(axis=0)
        scene_objects.append(SceneObject(object_id=obj_id, label=label,
                                         ply=f"objects/{obj_id}.ply", transform=t,
                                         bbox=(tuple(lo), tuple(hi))))
    SceneManifest(scene_id="scene_small", background="background.ply",
                  objects=scene_objects, planes=planes, light=light,
                  merged="merged.ply").save(out / "manifest.json")


if __name__ == "__main__":
    sys.exit(main())
