"""Composed-scene manifest: JSON schema, atomic persistence, validation.

Schema (documented wire format, consumed by the editor):
{
  "scene_id": str,
  "background": relative PLY path,
  "objects": [{"id", "label", "ply", "transform": {"t":[3],"q":[4],"s":f},
               "mask_id"?, "bbox"?: {"min":[3],"max":[3]}}],
  "planes": [{"n":[3], "d": f, "kind"?, "inliers"?}],
  "light": {"dir":[3], "shadow_strength": f, ...},
  "merged"?: relative PLY path of the composed cloud
}
The transform applies scale, then rotation, then translation.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

from .cloud import Sim3Transform
from .errors import DomainError
from .placement import LightConfig, SupportPlane


@dataclass
class SceneObject:
    object_id: str
    label: str
    ply: str                     # path relative to the manifest
    transform: Sim3Transform
    mask_id: str | None = None
    bbox: tuple | None = None    # ((min xyz), (max xyz)) of the canonical cloud

    def to_json_dict(self):
        d = {
            "id": self.object_id,
            "label": self.label,
            "ply": self.ply,
            "transform": self.transform.to_json_dict(),
        }
        if self.mask_id is not None:
            d["mask_id"] = self.mask_id
        if self.bbox is not None:
            d["bbox"] = {"min": [float(v) for v in self.bbox[0]],
                         "max": [float(v) for v in self.bbox[1]]}
        return d

    @classmethod
    def from_json_dict(cls, d):
        bbox = None
        if "bbox" in d:
            bbox = (tuple(d["bbox"]["min"]), tuple(d["bbox"]["max"]))
        return cls(object_id=d["id"], label=d["label"], ply=d["ply"],
                   transform=Sim3Transform.from_json_dict(d["transform"]),
                   mask_id=d.get("mask_id"), bbox=bbox)


@dataclass
class SceneManifest:
    scene_id: str
    background: str
    objects: list = field(default_factory=list)
    planes: list = field(default_factory=list)
    light: LightConfig = field(default_factory=LightConfig)
    merged: str | None = None

    def __post_init__(self):
        ids = [o.object_id for o in self.objects]
        if len(set(ids)) != len(ids):
            raise DomainError("object ids must be unique")

    def object_by_id(self, object_id: str) -> SceneObject:
        for o in self.objects:
            if o.object_id == object_id:
                return o
        raise KeyError(object_id)

    def to_json_dict(self):
        d = {
            "scene_id": self.scene_id,
            "background": self.background,
            "objects": [o.to_json_dict() for o in self.objects],
            "planes": [p.to_json_dict() for p in self.planes],
            "light": self.light.to_json_dict(),
        }
        if self.merged is not None:
            d["merged"] = self.merged
        return d

    @classmethod
    def from_json_dict(cls, d):
        return cls(
            scene_id=d["scene_id"],
            background=d["background"],
            objects=[SceneObject.from_json_dict(o) for o in d.get("objects", [])],
            planes=[SupportPlane.from_json_dict(p) for p in d.get("planes", [])],
            light=LightConfig.from_json_dict(d["light"]) if "light" in d else LightConfig(),
            merged=d.get("merged"),
        )

    def save(self, path) -> None:
        """Atomic write: a crashed save never leaves a torn manifest."""
        path = Path(path)
        blob = json.dumps(self.to_json_dict(), sort_keys=True, indent=1)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".manifest-", suffix=".json")
        try:
            with os.fdopen(fd, "w") as f:
                f.write(blob)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    @classmethod
    def load(cls, path) -> "SceneManifest":
        with open(path) as f:
            return cls.from_json_dict(json.load(f))

    def validate_assets(self, base_dir) -> None:
        base = Path(base_dir)
        missing = [p for p in [self.background] + [o.ply for o in self.objects]
                   + ([self.merged] if self.merged else [])
                   if not (base / p).exists()]
        if missing:
            raise DomainError(f"manifest references missing assets: {missing}")
