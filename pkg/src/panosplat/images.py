"""Image containers (equirect RGB, depth, masks) and their on-disk formats.

Formats: 8-bit RGB PNG for images, PFM (32-bit float, little-endian) and
16-bit millimeter PNG for depth, 8-bit 0/255 PNG for masks.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import DomainError, ParseError

# PNG encoder settings are pinned so identical pixels always produce identical bytes.
_PNG_OPTS = {"compress_level": 6, "optimize": False}


@dataclass(frozen=True)
class EquirectImage:
    """2:1 panoramic RGB image; channel values in [0,1], row-major (H, W, 3)."""

    data: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.data, dtype=np.float64)
        if a.ndim != 3 or a.shape[2] != 3:
            raise DomainError(f"equirect image must be (H, W, 3), got {a.shape}")
        h, w = a.shape[:2]
        if w != 2 * h or w < 4:
            raise DomainError(f"equirect image must satisfy W == 2H and W >= 4, got {w}x{h}")
        if not np.all(np.isfinite(a)) or a.min() < 0.0 or a.max() > 1.0:
            raise DomainError("equirect channel values must be finite and in [0, 1]")
        object.__setattr__(self, "data", a)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True)
class DepthMap:
    """Per-pixel metric depth in meters, measured along the viewing ray. Shape (H, W)."""

    data: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.data, dtype=np.float64)
        if a.ndim != 2:
            raise DomainError(f"depth map must be 2-D, got shape {a.shape}")
        if not np.all(np.isfinite(a)) or a.min() <= 0.0:
            raise DomainError("depth values must be finite and > 0")
        object.__setattr__(self, "data", a)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True)
class PixelMask:
    """Binary per-pixel mask, shape (H, W), stored as bool."""

    data: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.data)
        if a.ndim != 2:
            raise DomainError(f"mask must be 2-D, got shape {a.shape}")
        object.__setattr__(self, "data", a.astype(bool))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    def area(self) -> int:
        return int(self.data.sum())


def same_shape(*items) -> bool:
    shapes = [it.data.shape[:2] for it in items]
    return all(s == shapes[0] for s in shapes)


# --- PNG ---------------------------------------------------------------


def write_rgb_png(path, rgb: np.ndarray) -> None:
    """Write an (H, W, 3) float [0,1] array as 8-bit RGB PNG."""
    a = np.clip(np.asarray(rgb, dtype=np.float64), 0.0, 1.0)
    u8 = np.round(a * 255.0).astype(np.uint8)
    Image.fromarray(u8, mode="RGB").save(str(path), format="PNG", **_PNG_OPTS)


def read_rgb_png(path) -> np.ndarray:
    """Read an RGB PNG into an (H, W, 3) float array in [0,1]."""
    with Image.open(str(path)) as im:
        a = np.asarray(im.convert("RGB"), dtype=np.float64)
    return a / 255.0


def write_mask_png(path, mask: np.ndarray) -> None:
    u8 = np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)
    Image.fromarray(u8, mode="L").save(str(path), format="PNG", **_PNG_OPTS)


def read_mask_png(path) -> np.ndarray:
    with Image.open(str(path)) as im:
        a = np.asarray(im.convert("L"))
    return a >= 128


def write_depth_png16(path, depth: np.ndarray) -> None:
    """Encode meters as 16-bit millimeters (clamped to the uint16 range)."""
    mm = np.clip(np.round(np.asarray(depth, dtype=np.float64) * 1000.0), 0, 65535)
    Image.fromarray(mm.astype(np.uint16), mode="I;16").save(str(path), format="PNG", **_PNG_OPTS)


def read_depth_png16(path) -> np.ndarray:
    with Image.open(str(path)) as im:
        a = np.asarray(im, dtype=np.uint16)
    return a.astype(np.float64) / 1000.0


# --- PFM ---------------------------------------------------------------
# Grayscale "Pf" / color "PF"; a negative scale line marks little-endian data.
# Scanlines are stored bottom-to-top, following the de facto PFM convention.


def write_pfm(path, data: np.ndarray) -> None:
    a = np.asarray(data, dtype=np.float32)
    if a.ndim == 2:
        header = b"Pf"
    elif a.ndim == 3 and a.shape[2] == 3:
        header = b"PF"
    else:
        raise DomainError(f"PFM supports (H,W) or (H,W,3) arrays, got {a.shape}")
    h, w = a.shape[:2]
    with open(path, "wb") as f:
        f.write(header + b"\n")
        f.write(f"{w} {h}\n".encode("ascii"))
        f.write(b"-1.0\n")
        f.write(np.ascontiguousarray(a[::-1].astype("<f4")).tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        raw = f.read()
    m = re.match(rb"^(P[fF])\s+(\d+)\s+(\d+)\s+([-+0-9.eE]+)\s", raw)
    if not m:
        raise ParseError("PFM header: expected magic, dimensions and scale")
    magic, w, h, scale = m.group(1), int(m.group(2)), int(m.group(3)), float(m.group(4))
    channels = 3 if magic == b"PF" else 1
    offset = m.end()
    count = w * h * channels
    dt = "<f4" if scale < 0 else ">f4"
    payload = raw[offset:]
    if len(payload) < count * 4:
        raise ParseError(f"PFM payload truncated: need {count * 4} bytes, have {len(payload)}")
    a = np.frombuffer(payload[: count * 4], dtype=dt).reshape(h, w, channels)[::-1]
    a = a.astype(np.float64)
    return a[..., 0] if channels == 1 else a
