"""Readers and writers for point clouds, flow fields, PEAT weights, DT grid
dumps, dataset manifests, and coloured PLY exports.

Binary layouts (all little-endian):

* points ``.pcf``: ``b"PCF1"``, u64 count, then count x 3 float32
* flow ``.flw``:   ``b"FLW1"``, u64 count, then count x 3 float32
* PEAT weights:    ``b"PEAT"``, u32 d_pe, u32 d_k, u32 d_v, then W_Q, W_K, W_V
  as row-major float32
* DT grid dump:    ``b"DTG1"``, 3 x u32 dims, 3 x f32 origin, f32 spacing,
  then float32 values with x varying fastest

Text ``.xyz`` files hold one ``x y z`` triple per line.
"""

from __future__ import annotations

import colorsys
import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import ContractError, FlowField, PointCloud
from .embed import PeatWeights
from .loss import DistanceTransformGrid


class ParseError(ValueError):
    pass


_F32 = np.dtype("<f4")
_COUNT_HEADER = struct.Struct("<4sQ")
_PEAT_HEADER = struct.Struct("<4sIII")
_DTG_HEADER = struct.Struct("<4s3I3ff")


def _read_xyz(path: Path) -> np.ndarray:
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            fields = line.split()
            if len(fields) != 3:
                raise ParseError(f"{path}:{lineno}: expected 3 fields, found {len(fields)}")
            try:
                rows.append([float(v) for v in fields])
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-numeric field in {line!r}") from None
    if not rows:
        raise ParseError(f"{path}: no points")
    return np.asarray(rows, dtype=np.float64)


def _write_xyz(path: Path, arr: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for x, y, z in arr:
            fh.write(f"{float(x)!r} {float(y)!r} {float(z)!r}\n")


def _read_binary(path: Path, magic: bytes) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < _COUNT_HEADER.size:
        raise ParseError(f"{path}: truncated header ({len(data)} bytes)")
    found, count = _COUNT_HEADER.unpack_from(data)
    if found != magic:
        raise ParseError(f"{path}: bad magic, expected {magic!r}, found {found!r}")
    need = _COUNT_HEADER.size + count * 12
    if len(data) < need:
        raise ParseError(f"{path}: truncated at byte {len(data)}, expected {need} bytes")
    if len(data) > need:
        raise ParseError(f"{path}: {len(data) - need} trailing bytes after offset {need}")
    arr = np.frombuffer(data, dtype=_F32, count=count * 3, offset=_COUNT_HEADER.size)
    return arr.reshape(count, 3).astype(np.float64)


def _write_binary(path: Path, arr: np.ndarray, magic: bytes) -> None:
    with open(path, "wb") as fh:
        fh.write(_COUNT_HEADER.pack(magic, len(arr)))
        fh.write(np.ascontiguousarray(arr, dtype=_F32).tobytes())


def _is_binary(path: Path) -> bool:
    ext = Path(path).suffix.lower()
    if ext in (".pcf", ".flw"):
        return True
    if ext in (".xyz", ".txt"):
        return False
    raise ParseError(f"{path}: unsupported extension {ext!r} (use .xyz, .pcf or .flw)")


def read_points(path) -> PointCloud:
    path = Path(path)
    arr = _read_binary(path, b"PCF1") if _is_binary(path) else _read_xyz(path)
    try:
        return PointCloud(arr)
    except ContractError as exc:
        raise ParseError(f"{path}: {exc}") from None


def write_points(path, cloud: PointCloud) -> None:
    path = Path(path)
    if _is_binary(path):
        _write_binary(path, cloud.points, b"PCF1")
    else:
        _write_xyz(path, cloud.points)


def read_flow(path) -> FlowField:
    path = Path(path)
    arr = _read_binary(path, b"FLW1") if _is_binary(path) else _read_xyz(path)
    try:
        return FlowField(arr)
    except ContractError as exc:
        raise ParseError(f"{path}: {exc}") from None


def write_flow(path, flow: FlowField) -> None:
    path = Path(path)
    if _is_binary(path):
        _write_binary(path, flow.vectors, b"FLW1")
    else:
        _write_xyz(path, flow.vectors)


def write_peat_weights(path, weights: PeatWeights) -> None:
    with open(path, "wb") as fh:
        fh.write(_PEAT_HEADER.pack(b"PEAT", weights.d_pe, weights.d_k, weights.d_v))
        for m in (weights.w_q, weights.w_k, weights.w_v):
            fh.write(np.ascontiguousarray(m, dtype=_F32).tobytes())


def read_peat_weights(path) -> PeatWeights:
    data = Path(path).read_bytes()
    if len(data) < _PEAT_HEADER.size:
        raise ParseError(f"{path}: truncated header")
    magic, d_pe, d_k, d_v = _PEAT_HEADER.unpack_from(data)
    if magic != b"PEAT":
        raise ParseError(f"{path}: bad magic, expected b'PEAT', found {magic!r}")
    sizes = (d_pe * d_k, d_pe * d_k, d_pe * d_v)
    need = _PEAT_HEADER.size + 4 * sum(sizes)
    if len(data) != need:
        raise ParseError(f"{path}: expected {need} bytes, found {len(data)}")
    flat = np.frombuffer(data, dtype=_F32, offset=_PEAT_HEADER.size).astype(np.float64)
    q, k, v = np.split(flat, np.cumsum(sizes)[:2])
    return PeatWeights(q.reshape(d_pe, d_k), k.reshape(d_pe, d_k), v.reshape(d_pe, d_v))


def write_dt_grid(path, grid: DistanceTransformGrid) -> None:
    with open(path, "wb") as fh:
        fh.write(_DTG_HEADER.pack(b"DTG1", *grid.dims, *grid.origin, grid.spacing))
        fh.write(np.ascontiguousarray(grid.values, dtype=_F32).tobytes())


def read_dt_grid(path) -> DistanceTransformGrid:
    data = Path(path).read_bytes()
    if len(data) < _DTG_HEADER.size:
        raise ParseError(f"{path}: truncated header")
    magic, gx, gy, gz, ox, oy, oz, spacing = _DTG_HEADER.unpack_from(data)
    if magic != b"DTG1":
        raise ParseError(f"{path}: bad magic, expected b'DTG1', found {magic!r}")
    need = _DTG_HEADER.size + 4 * gx * gy * gz
    if len(data) != need:
        raise ParseError(f"{path}: expected {need} bytes, found {len(data)}")
    vals = np.frombuffer(data, dtype=_F32, offset=_DTG_HEADER.size).astype(np.float64)
    return DistanceTransformGrid((ox, oy, oz), float(spacing), (gx, gy, gz), vals.reshape(gz, gy, gx))


# ---------------------------------------------------------------------------
# manifests


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    source: Path
    target: Path
    gt_flow: Path | None = None


def read_manifest(path) -> list[ManifestEntry]:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(raw, list):
        raise ParseError(f"{path}: manifest must be a JSON array")
    base = path.parent
    entries, seen = [], set()
    for i, item in enumerate(raw):
        try:
            sid = str(item["id"])
            src, tgt = base / item["source"], base / item["target"]
        except (KeyError, TypeError):
            raise ParseError(f"{path}: entry {i} needs id, source and target") from None
        gt = base / item["gt_flow"] if item.get("gt_flow") else None
        if sid in seen:
            raise ParseError(f"{path}: duplicate sample id {sid!r}")
        seen.add(sid)
        for p in (src, tgt, gt):
            if p is not None and not p.exists():
                raise ParseError(f"{path}: entry {sid!r} references missing file {p}")
        entries.append(ManifestEntry(sid, src, tgt, gt))
    return entries


def write_manifest(path, entries) -> None:
    path = Path(path)
    base = path.parent
    out = []
    for e in entries:
        rec = {"id": e.id, "source": os.path.relpath(e.source, base), "target": os.path.relpath(e.target, base)}
        if e.gt_flow is not None:
            rec["gt_flow"] = os.path.relpath(e.gt_flow, base)
        out.append(rec)
    path.write_text(json.dumps(out, indent=2) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# visualisation

NEUTRAL_GRAY = (128, 128, 128)


def flow_colors(flow: np.ndarray) -> np.ndarray:
    """RGB per vector: hue from the xy direction, brightness from magnitude.

    Hue = atan2(fy, fx) mapped to [0, 1) (angle 0 is red). Saturation and
    value both equal min(|f| / f_max, 1), with f_max the 95th percentile of
    the nonzero magnitudes, and the result is blended over neutral gray so a
    zero vector is exactly (128, 128, 128).
    """
    mag = np.linalg.norm(flow, axis=1)
    nonzero = mag[mag > 0]
    f_max = np.percentile(nonzero, 95) if nonzero.size else 1.0
    strength = np.minimum(mag / f_max, 1.0) if f_max > 0 else np.zeros_like(mag)
    hue = (np.arctan2(flow[:, 1], flow[:, 0]) / (2 * np.pi)) % 1.0
    out = np.empty((len(flow), 3), dtype=np.uint8)
    for i, (h, s) in enumerate(zip(hue, strength)):
        r, g, b = colorsys.hsv_to_rgb(h, 1.0, 1.0)
        rgb = np.array(NEUTRAL_GRAY) * (1 - s) + 255.0 * np.array([r, g, b]) * s
        out[i] = np.clip(np.rint(rgb), 0, 255)
    return out


def export_ply(cloud: PointCloud, flow: FlowField, path) -> None:
    if len(cloud) != len(flow):
        raise ContractError(f"cloud has {len(cloud)} points but flow has {len(flow)} vectors")
    colors = flow_colors(flow.vectors)
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write("comment flow colours: hue = atan2(fy, fx) with angle 0 red; "
                 "strength = min(|f| / p95(|f|), 1) blends from gray (128,128,128) "
                 "to the full-saturation hue\n")
        fh.write(f"element vertex {len(cloud)}\n")
        fh.write("property float x\nproperty float y\nproperty float z\n")
        fh.write("property uchar red\nproperty uchar green\nproperty uchar blue\n")
        fh.write("end_header\n")
        for (x, y, z), (r, g, b) in zip(cloud.points, colors):
            fh.write(f"{x:.6f} {y:.6f} {z:.6f} {r} {g} {b}\n")
