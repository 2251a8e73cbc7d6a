"""Local scene server backing the browser editor.

Endpoints (all JSON unless noted):
  GET  /api/manifest                      manifest document
  GET  /api/asset/{id}                    binary PLY (background | merged | object id)
  POST /api/objects/{id}/transform        body {"t":[3],"q":[4],"s":f}
  POST /api/objects/{id}/snap             server-side snap_to_plane
  POST /api/recompose                     rerun shadow + merge, returns {"asset": id}
  GET  /api/render?cam=<urlencoded json>  PNG preview via the rasterizer

Unknown ids give 404; invariant violations give 422 with the field name.
Mutations are serialized by a single lock and persisted atomically.
"""

from __future__ import annotations

import io
import json
import logging
import threading
import urllib.parse
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import numpy as np

from .cameras import PerspectiveCamera
from .cloud import Sim3Transform
from .errors import DomainError
from .manifest import SceneManifest
from .placement import compose_scene, snap_to_plane
from .ply import read_ply, write_ply
from .render import render_perspective

log = logging.getLogger(__name__)


class SceneState:
    """Single composed scene plus its on-disk assets."""

    def __init__(self, manifest_path):
        self.manifest_path = Path(manifest_path)
        self.base = self.manifest_path.parent
        self.manifest = SceneManifest.load(self.manifest_path)
        self.manifest.validate_assets(self.base)
        self.lock = threading.Lock()
        self._clouds = {}
        self._merged = None

    def cloud_for(self, ply_rel: str):
        if ply_rel not in self._clouds:
            self._clouds[ply_rel] = read_ply(self.base / ply_rel)
        return self._clouds[ply_rel]

    def asset_bytes(self, asset_id: str) -> bytes:
        if asset_id == "background":
            return (self.base / self.manifest.background).read_bytes()
        if asset_id == "merged":
            if self.manifest.merged is None:
                self.recompose()
            return (self.base / self.manifest.merged).read_bytes()
        obj = self.manifest.object_by_id(asset_id)  # KeyError -> 404
        return (self.base / obj.ply).read_bytes()

    def set_transform(self, object_id: str, body: dict) -> Sim3Transform:
        transform = _parse_transform(body)
        with self.lock:
            obj = self.manifest.object_by_id(object_id)
            obj.transform = transform
            self.manifest.save(self.manifest_path)
            self._merged = None
        return transform

    def snap(self, object_id: str) -> Sim3Transform:
        with self.lock:
            obj = self.manifest.object_by_id(object_id)
            cloud = self.cloud_for(obj.ply)
            snapped = snap_to_plane((cloud, obj.transform), self.manifest.planes)
            obj.transform = snapped
            self.manifest.save(self.manifest_path)
            self._merged = None
        return snapped

    def recompose(self) -> str:
        with self.lock:
            background = self.cloud_for(self.manifest.background)
            objects = [(o.object_id, o.label, self.cloud_for(o.ply), o.transform)
                       for o in self.manifest.objects]
            snapped, _, merged = compose_scene(background, objects,
                                               self.manifest.planes, self.manifest.light)
            for (oid, _, _, t), obj in zip(snapped, self.manifest.objects):
                obj.transform = t
            merged_rel = self.manifest.merged or "merged.ply"
            write_ply(merged, self.base / merged_rel)
            self.manifest.merged = merged_rel
            self.manifest.save(self.manifest_path)
            self._merged = merged
        return "merged"

    def merged_cloud(self):
        with self.lock:
            if self._merged is None:
                background = self.cloud_for(self.manifest.background)
                parts = [(background, Sim3Transform.identity())]
                parts += [(self.cloud_for(o.ply), o.transform)
                          for o in self.manifest.objects]
                from .cloud import merge_clouds

                self._merged = merge_clouds(parts)
            return self._merged


def _parse_transform(body: dict) -> Sim3Transform:
    for name in ("t", "q", "s"):
        if name not in body:
            raise _Invalid(name, "missing")
    t = np.asarray(body["t"], dtype=np.float64)
    q = np.asarray(body["q"], dtype=np.float64)
    s = body["s"]
    if t.shape != (3,) or not np.all(np.isfinite(t)):
        raise _Invalid("t", "must be 3 finite numbers")
    if q.shape != (4,) or not np.all(np.isfinite(q)):
        raise _Invalid("q", "must be 4 finite numbers")
    n = np.linalg.norm(q)
    if abs(n - 1.0) > 1e-3:
        raise _Invalid("q", "must be unit length within 1e-3")
    if not (np.isfinite(s) and s > 0):
        raise _Invalid("s", "must be a positive finite scalar")
    return Sim3Transform(rotation=q / n, translation=t, scale=float(s))


class _Invalid(Exception):
    def __init__(self, field, message):
        super().__init__(message)
        self.field = field


def make_handler(state: SceneState, static_dir=None):
    class Handler(BaseHTTPRequestHandler):
        def log_message(self, fmt, *args):
            log.debug("http: " + fmt, *args)

        def _send(self, code, payload: bytes, content_type="application/json"):
            self.send_response(code)
            self.send_header("Content-Type", content_type)
            self.send_header("Content-Length", str(len(payload)))
            self.send_header("Access-Control-Allow-Origin", "*")
            self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
            self.send_header("Access-Control-Allow-Headers", "Content-Type")
            self.end_headers()
            self.wfile.write(payload)

        def _json(self, code, obj):
            self._send(code, json.dumps(obj, sort_keys=True).encode())

        def do_OPTIONS(self):
            self._send(204, b"")

        def do_GET(self):
            try:
                parsed = urllib.parse.urlparse(self.path)
                if parsed.path == "/api/manifest":
                    self._json(200, state.manifest.to_json_dict())
                elif parsed.path.startswith("/api/asset/"):
                    asset_id = urllib.parse.unquote(parsed.path.split("/api/asset/", 1)[1])
                    try:
                        blob = state.asset_bytes(asset_id)
                    except KeyError:
                        self._json(404, {"error": f"unknown asset {asset_id!r}"})
                        return
                    self._send(200, blob, content_type="application/octet-stream")
                elif parsed.path == "/api/render":
                    params = urllib.parse.parse_qs(parsed.query)
                    if "cam" not in params:
                        self._json(422, {"field": "cam", "error": "missing"})
                        return
                    try:
                        cam = PerspectiveCamera.from_json(params["cam"][0])
                    except (DomainError, KeyError, json.JSONDecodeError) as exc:
                        self._json(422, {"field": "cam", "error": str(exc)})
                        return
                    out = render_perspective(state.merged_cloud(), cam)
                    self._send(200, _png_bytes(out.color), content_type="image/png")
                elif static_dir is not None:
                    self._static(parsed.path)
                else:
                    self._json(404, {"error": "not found"})
            except BrokenPipeError:
                pass
            except Exception as exc:
                log.exception("GET %s failed", self.path)
                self._json(500, {"error": str(exc)})

        def _static(self, path):
            rel = path.lstrip("/") or "index.html"
            full = (Path(static_dir) / rel).resolve()
            if not str(full).startswith(str(Path(static_dir).resolve())) or not full.is_file():
                self._json(404, {"error": "not found"})
                return
            types = {".html": "text/html", ".js": "text/javascript",
                     ".css": "text/css", ".map": "application/json"}
            self._send(200, full.read_bytes(),
                       content_type=types.get(full.suffix, "application/octet-stream"))

        def do_POST(self):
            try:
                length = int(self.headers.get("Content-Length", 0))
                body = json.loads(self.rfile.read(length) or b"{}")
                parts = self.path.strip("/").split("/")
                if self.path == "/api/recompose":
                    asset = state.recompose()
                    self._json(200, {"asset": asset})
                elif len(parts) == 4 and parts[:2] == ["api", "objects"]:
                    object_id, action = parts[2], parts[3]
                    try:
                        if action == "transform":
                            t = state.set_transform(urllib.parse.unquote(object_id), body)
                        elif action == "snap":
                            t = state.snap(urllib.parse.unquote(object_id))
                        else:
                            self._json(404, {"error": f"unknown action {action!r}"})
                            return
                    except KeyError:
                        self._json(404, {"error": f"unknown object {object_id!r}"})
                        return
                    except _Invalid as exc:
                        self._json(422, {"field": exc.field, "error": str(exc)})
                        return
                    self._json(200, {"transform": t.to_json_dict()})
                else:
                    self._json(404, {"error": "not found"})
            except json.JSONDecodeError as exc:
                self._json(422, {"field": "body", "error": f"invalid JSON: {exc}"})
            except BrokenPipeError:
                pass
            except Exception as exc:
                log.exception("POST %s failed", self.path)
                self._json(500, {"error": str(exc)})

    return Handler


def _png_bytes(rgb: np.ndarray) -> bytes:
    from PIL import Image

    buf = io.BytesIO()
    a = np.clip(np.asarray(rgb, dtype=np.float64), 0, 1)
    Image.fromarray(np.round(a * 255).astype(np.uint8), "RGB").save(
        buf, format="PNG", compress_level=6, optimize=False)
    return buf.getvalue()


def serve(manifest_path, port: int, static_dir=None) -> ThreadingHTTPServer:
    """Build the server (caller decides whether to run it in the foreground)."""
    state = SceneState(manifest_path)
    server = ThreadingHTTPServer(("127.0.0.1", port), make_handler(state, static_dir))
    server.scene_state = state
    return server
