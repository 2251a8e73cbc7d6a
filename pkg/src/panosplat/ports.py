"""Ports to the external generative models: wire codecs, HTTP client, and
the deterministic mock implementations that make full offline runs possible.

Wire protocol: HTTP POST of a JSON envelope {"version": 1, "kind":
"<port>.request", ...} with base64 PNG/PFM/PLY payloads, one path per port
(/v1/panorama, /v1/segment, /v1/inpaint2d, /v1/depth, /v1/depth_inpaint,
/v1/object, /v1/pose_match, /v1/rank, /v1/sds). Responses mirror the
envelope with kind "<port>.response".
"""

from __future__ import annotations

import base64
import io
import json
import logging
from dataclasses import dataclass

import numpy as np

from .cloud import Sim3Transform, SplatCloud
from .errors import DomainError, PortError
from .images import DepthMap, EquirectImage, PixelMask

log = logging.getLogger(__name__)

MOCK = "mock"

PORT_PATHS = {
    "panorama": "/v1/panorama",
    "segment": "/v1/segment",
    "inpaint2d": "/v1/inpaint2d",
    "depth": "/v1/depth",
    "depth_inpaint": "/v1/depth_inpaint",
    "object_gen": "/v1/object",
    "pose_match": "/v1/pose_match",
    "rank": "/v1/rank",
    "sds": "/v1/sds",
}


@dataclass(frozen=True)
class PortConfig:
    endpoint: str = MOCK          # "mock" or a base URL like http://host:9000
    timeout: float = 60.0
    retries: int = 1
    strict: bool = False

    def __post_init__(self):
        if self.timeout <= 0:
            raise DomainError("port timeout must be positive")

    @property
    def is_mock(self) -> bool:
        return self.endpoint.strip().lower() == MOCK


@dataclass(frozen=True)
class DetectedObject:
    class_id: str
    description: str
    mask: PixelMask
    confidence: float

    def __post_init__(self):
        if self.mask.area() == 0:
            raise DomainError("detected object mask is empty")
        if not 0.0 <= self.confidence <= 1.0:
            raise DomainError("confidence must lie in [0, 1]")


def rank_and_truncate(detections, max_objects: int):
    """Sort by confidence descending (stable) and keep the top N."""
    order = sorted(range(len(detections)), key=lambda i: (-detections[i].confidence, i))
    return [detections[i] for i in order[:max_objects]]


# --- base64 payload codecs ------------------------------------------------


def png_b64(rgb: np.ndarray) -> str:
    from PIL import Image

    buf = io.BytesIO()
    a = np.clip(np.asarray(rgb, dtype=np.float64), 0, 1)
    Image.fromarray(np.round(a * 255).astype(np.uint8), "RGB").save(
        buf, format="PNG", compress_level=6, optimize=False)
    return base64.b64encode(buf.getvalue()).decode("ascii")


def b64_png(s: str) -> np.ndarray:
    from PIL import Image

    raw = base64.b64decode(s)
    with Image.open(io.BytesIO(raw)) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def mask_b64(mask: PixelMask) -> str:
    from PIL import Image

    buf = io.BytesIO()
    Image.fromarray(np.where(mask.data, 255, 0).astype(np.uint8), "L").save(
        buf, format="PNG", compress_level=6, optimize=False)
    return base64.b64encode(buf.getvalue()).decode("ascii")


def b64_mask(s: str) -> PixelMask:
    from PIL import Image

    raw = base64.b64decode(s)
    with Image.open(io.BytesIO(raw)) as im:
        return PixelMask(np.asarray(im.convert("L")) >= 128)


def pfm_b64(arr: np.ndarray) -> str:
    import tempfile

    from .images import write_pfm

    with tempfile.NamedTemporaryFile(suffix=".pfm") as f:
        write_pfm(f.name, np.asarray(arr))
        f.seek(0)
        return base64.b64encode(f.read()).decode("ascii")


def b64_pfm(s: str) -> np.ndarray:
    import tempfile

    from .images import read_pfm

    with tempfile.NamedTemporaryFile(suffix=".pfm") as f:
        f.write(base64.b64decode(s))
        f.flush()
        return read_pfm(f.name)


def ply_b64(cloud: SplatCloud) -> str:
    import tempfile

    from .ply import write_ply

    with tempfile.NamedTemporaryFile(suffix=".ply") as f:
        write_ply(cloud, f.name)
        f.seek(0)
        return base64.b64encode(f.read()).decode("ascii")


def b64_ply(s: str) -> SplatCloud:
    import tempfile

    from .ply import read_ply

    with tempfile.NamedTemporaryFile(suffix=".ply") as f:
        f.write(base64.b64decode(s))
        f.flush()
        return read_ply(f.name)


# --- HTTP transport -------------------------------------------------------


def _post(cfg: PortConfig, port: str, payload: dict) -> dict:
    import requests

    url = cfg.endpoint.rstrip("/") + PORT_PATHS[port]
    body = dict(payload)
    body["version"] = 1
    body["kind"] = f"{port}.request"
    last = None
    for attempt in range(max(cfg.retries, 0) + 1):
        try:
            resp = requests.post(url, json=body, timeout=cfg.timeout)
            if resp.status_code != 200:
                raise PortError(f"{port}: HTTP {resp.status_code}: {resp.text[:200]}")
            data = resp.json()
            if data.get("version") != 1 or data.get("kind") != f"{port}.response":
                raise PortError(f"{port}: malformed response envelope: "
                                f"{json.dumps(data)[:200]}")
            return data
        except PortError:
            raise
        except Exception as exc:  # timeouts, connection errors, bad JSON
            last = exc
            log.warning("%s port attempt %d failed: %s", port, attempt + 1, exc)
    raise PortError(f"{port}: request failed after {cfg.retries + 1} attempts: {last}")


class Ports:
    """One client per external model; each port is either HTTP or mock.

    Mocks are pure functions of their inputs plus the fixture context, so
    repeated calls are byte-identical and the whole pipeline runs offline.
    """

    def __init__(self, configs: dict | None = None, mock_context=None):
        from .mocks import MockContext

        self.configs = {name: PortConfig() for name in PORT_PATHS}
        for name, cfg in (configs or {}).items():
            if name not in PORT_PATHS:
                raise DomainError(f"unknown port {name!r}")
            self.configs[name] = cfg
        self.ctx = mock_context or MockContext()

    def _cfg(self, name) -> PortConfig:
        return self.configs[name]

    def panorama(self, prompt: str, style_image=None, resolution=(1024, 512)) -> EquirectImage:
        if not prompt:
            raise DomainError("panorama prompt must be non-empty")
        cfg = self._cfg("panorama")
        if cfg.is_mock:
            from .mocks import mock_panorama

            return mock_panorama(self.ctx, prompt, resolution)
        payload = {"prompt": prompt, "width": resolution[0], "height": resolution[1]}
        if style_image is not None:
            payload["style_png_b64"] = png_b64(style_image)
        data = _post(cfg, "panorama", payload)
        img = b64_png(data["png_b64"])
        return EquirectImage(img)

    def segment(self, panorama: EquirectImage, max_objects: int = 12):
        cfg = self._cfg("segment")
        if cfg.is_mock:
            from .mocks import mock_segment

            dets = mock_segment(self.ctx, panorama)
        else:
            data = _post(cfg, "segment", {"png_b64": png_b64(panorama.data),
                                          "max_objects": max_objects})
            dets = []
            for o in data["objects"]:
                dets.append(DetectedObject(
                    class_id=o["class_id"], description=o.get("description", ""),
                    mask=b64_mask(o["mask_png_b64"]), confidence=float(o["confidence"])))
        return rank_and_truncate(dets, max_objects)

    def inpaint2d(self, image: np.ndarray, mask: PixelMask) -> np.ndarray:
        cfg = self._cfg("inpaint2d")
        if cfg.is_mock:
            from .mocks import mock_inpaint2d

            return mock_inpaint2d(image, mask)
        data = _post(cfg, "inpaint2d", {"png_b64": png_b64(image),
                                        "mask_png_b64": mask_b64(mask)})
        return b64_png(data["png_b64"])

    def depth(self, image: EquirectImage) -> DepthMap:
        cfg = self._cfg("depth")
        if cfg.is_mock:
            from .mocks import mock_depth

            return mock_depth(self.ctx, image)
        data = _post(cfg, "depth", {"png_b64": png_b64(image.data)})
        return DepthMap(b64_pfm(data["pfm_b64"]))

    def depth_inpaint(self, depth: np.ndarray, mask: PixelMask, guide: np.ndarray) -> np.ndarray:
        cfg = self._cfg("depth_inpaint")
        if cfg.is_mock:
            from .mocks import mock_depth_inpaint

            return mock_depth_inpaint(depth, mask, guide)
        data = _post(cfg, "depth_inpaint", {
            "depth_pfm_b64": pfm_b64(depth),
            "mask_png_b64": mask_b64(mask),
            "guide_pfm_b64": pfm_b64(guide),
        })
        return b64_pfm(data["pfm_b64"])

    def object_gen(self, crop_image: np.ndarray, description: str, style_image=None,
                   partial_depth=None, seed: int = 0) -> SplatCloud:
        cfg = self._cfg("object_gen")
        if cfg.is_mock:
            from .mocks import mock_object_gen

            return mock_object_gen(crop_image, description, style_image, seed)
        payload = {"png_b64": png_b64(crop_image), "description": description,
                   "seed": int(seed)}
        if style_image is not None:
            payload["style_png_b64"] = png_b64(style_image)
        if partial_depth is not None:
            payload["partial_depth_pfm_b64"] = pfm_b64(partial_depth)
        data = _post(cfg, "object_gen", payload)
        return b64_ply(data["ply_b64"])

    def pose_match(self, image_a: np.ndarray, image_b: np.ndarray) -> Sim3Transform:
        cfg = self._cfg("pose_match")
        if cfg.is_mock:
            return self.ctx.pose_match_result
        data = _post(cfg, "pose_match", {"png_a_b64": png_b64(image_a),
                                         "png_b_b64": png_b64(image_b)})
        return Sim3Transform.from_json_dict(data["transform"])

    def rank(self, candidates, reference: np.ndarray) -> int:
        cfg = self._cfg("rank")
        if cfg.is_mock:
            from .mocks import mock_rank

            return mock_rank(candidates, reference)
        data = _post(cfg, "rank", {
            "candidates_png_b64": [png_b64(c) for c in candidates],
            "reference_png_b64": png_b64(reference),
        })
        idx = int(data["index"])
        if not 0 <= idx < len(candidates):
            raise PortError(f"rank: index {idx} outside candidate range")
        return idx

    def sds(self, image: np.ndarray, camera) -> np.ndarray:
        cfg = self._cfg("sds")
        if cfg.is_mock:
            return np.zeros_like(np.asarray(image, dtype=np.float64))
        data = _post(cfg, "sds", {"png_b64": png_b64(image),
                                  "camera": camera.to_json_dict()})
        return b64_pfm(data["grad_pfm_b64"])
