"""Binary PLY interchange in the de facto 3DGS layout.

Canonical property order: x y z, nx ny nz, f_dc_0..2, f_rest_* (optional),
opacity (logit), scale_0..2 (log), rot_0..3. Unknown extra properties are
preserved across a read/write round trip (appended after rot_3); files in
the canonical layout round-trip bit-exactly.
"""

from __future__ import annotations

import re

import numpy as np

from .cloud import SplatCloud
from .errors import ParseError

_PLY_TYPES = {
    "float": "<f4", "float32": "<f4",
    "double": "<f8", "float64": "<f8",
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "<i2", "int16": "<i2",
    "ushort": "<u2", "uint16": "<u2",
    "int": "<i4", "int32": "<i4",
    "uint": "<u4", "uint32": "<u4",
}
_PLY_NAMES = {v: k for k, v in _PLY_TYPES.items() if k in (
    "float", "double", "char", "uchar", "short", "ushort", "int", "uint")}

_CORE = ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
_TAIL = ["opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"]
_REST_RE = re.compile(r"^f_rest_(\d+)$")


def _parse_header(raw: bytes):
    end = raw.find(b"end_header\n")
    if not raw.startswith(b"ply\n") or end < 0:
        raise ParseError("PLY header: missing 'ply' magic or 'end_header'")
    lines = raw[:end].decode("ascii", errors="replace").splitlines()
    fmt = next((ln for ln in lines if ln.startswith("format ")), None)
    if fmt != "format binary_little_endian 1.0":
        raise ParseError(f"PLY header: unsupported format line {fmt!r}")
    count = None
    props: list[tuple[str, str]] = []
    in_vertex = False
    for ln in lines:
        parts = ln.split()
        if not parts:
            continue
        if parts[0] == "element":
            in_vertex = parts[1] == "vertex"
            if in_vertex:
                count = int(parts[2])
            elif count is None:
                raise ParseError(f"PLY header: first element must be 'vertex', got {parts[1]!r}")
        elif parts[0] == "property" and in_vertex:
            if parts[1] == "list":
                raise ParseError("PLY header: list properties are not supported for vertices")
            if parts[1] not in _PLY_TYPES:
                raise ParseError(f"PLY header: unknown property type {parts[1]!r}")
            props.append((parts[2], _PLY_TYPES[parts[1]]))
    if count is None:
        raise ParseError("PLY header: missing 'element vertex'")
    return count, props, end + len(b"end_header\n")


def read_ply(path) -> SplatCloud:
    with open(path, "rb") as f:
        raw = f.read()
    count, props, offset = _parse_header(raw)
    names = [n for n, _ in props]
    for required in _CORE + _TAIL:
        if required not in names:
            raise ParseError(f"PLY vertex element: missing mandatory property '{required}'")
    dtype = np.dtype([(n, t) for n, t in props])
    need = count * dtype.itemsize
    payload = raw[offset:]
    if len(payload) < need:
        raise ParseError(
            f"PLY payload truncated: vertex data needs {need} bytes, found {len(payload)}")
    rec = np.frombuffer(payload[:need], dtype=dtype)

    def col(*ns):
        return np.stack([rec[n].astype(np.float64) for n in ns], axis=1)

    rest_names = sorted((n for n in names if _REST_RE.match(n)),
                        key=lambda n: int(_REST_RE.match(n).group(1)))
    f_rest = col(*rest_names) if rest_names else None
    known = set(_CORE + _TAIL) | set(rest_names)
    extras = {n: np.array(rec[n]) for n in names if n not in known}
    return SplatCloud(
        positions=col("x", "y", "z"),
        rotations=_normalized(col("rot_0", "rot_1", "rot_2", "rot_3")),
        log_scales=col("scale_0", "scale_1", "scale_2"),
        logit_opacities=rec["opacity"].astype(np.float64),
        dc=col("f_dc_0", "f_dc_1", "f_dc_2"),
        normals=col("nx", "ny", "nz"),
        f_rest=f_rest,
        extras=extras,
    )


def _normalized(q: np.ndarray) -> np.ndarray:
    """Renormalize only rows that need it so conforming files keep their bytes."""
    n = np.linalg.norm(q, axis=1)
    bad = np.abs(n - 1.0) > 1e-6
    if bad.any():
        safe = np.where(n[bad] > 0, n[bad], 1.0)
        q = q.copy()
        q[bad] = np.where(n[bad, None] > 0, q[bad] / safe[:, None], [1.0, 0.0, 0.0, 0.0])
    return q


def write_ply(cloud: SplatCloud, path) -> None:
    n = len(cloud)
    rest_width = 0 if cloud.f_rest is None else cloud.f_rest.shape[1]
    fields = [(name, "<f4") for name in _CORE]
    fields += [(f"f_rest_{i}", "<f4") for i in range(rest_width)]
    fields += [(name, "<f4") for name in _TAIL]
    fields += [(name, cloud.extras[name].dtype.str) for name in cloud.extras]
    rec = np.empty(n, dtype=np.dtype(fields))

    pos = cloud.positions.astype(np.float32)
    nrm = cloud.normals.astype(np.float32)
    dc = cloud.dc.astype(np.float32)
    scl = cloud.log_scales.astype(np.float32)
    rot = cloud.rotations.astype(np.float32)
    for i, ax in enumerate("xyz"):
        rec[ax] = pos[:, i]
        rec["n" + ax] = nrm[:, i]
    for i in range(3):
        rec[f"f_dc_{i}"] = dc[:, i]
        rec[f"scale_{i}"] = scl[:, i]
    for i in range(rest_width):
        rec[f"f_rest_{i}"] = cloud.f_rest[:, i].astype(np.float32)
    rec["opacity"] = cloud.logit_opacities.astype(np.float32)
    for i in range(4):
        rec[f"rot_{i}"] = rot[:, i]
    for name, arr in cloud.extras.items():
        rec[name] = arr

    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    for name, dt in fields:
        header.append(f"property {_ply_type_name(dt)} {name}")
    header.append("end_header")
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        f.write(rec.tobytes())


def _ply_type_name(dt) -> str:
    s = np.dtype(dt).str
    key = s if s in _PLY_NAMES else s.replace("|", "").replace("=", "<")
    if key not in _PLY_NAMES:
        key = "<" + s.lstrip("<>=|")
    if key not in _PLY_NAMES:
        raise ParseError(f"PLY write: unsupported property dtype {s!r}")
    return _PLY_NAMES[key]
