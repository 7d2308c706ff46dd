"""Synthetic scene pairs with exact ground-truth flow.

A scene is a box of static (or uniformly translated) background points plus a
few rigid objects whose points lie on the faces of a cuboid, the way a lidar
sees a vehicle. Each object's points move by a rotation about the object
centre followed by a translation. Sensor noise is added to the target only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .core import FlowField, PointCloud


@dataclass
class ObjectSpec:
    points: int = 1000
    size: tuple[float, float, float] = (4.0, 2.0, 1.5)
    center: tuple[float, float, float] = (0.0, 0.0, 0.75)
    rotation: tuple[float, float, float] = (0.0, 0.0, 0.0)  # axis * angle, radians
    translation: tuple[float, float, float] = (1.0, 0.0, 0.0)


def default_objects() -> list[ObjectSpec]:
    return [
        ObjectSpec(center=(-6.0, 4.0, 1.0), translation=(1.0, 0.0, 0.0),
                   rotation=(0.0, 0.0, np.deg2rad(3.0))),
        ObjectSpec(center=(8.0, -5.0, 1.0), translation=(0.0, -0.6, 0.0)),
    ]


def make_objects(n: int, seed: int = 0, extent=(40.0, 40.0, 4.0)) -> list[ObjectSpec]:
    """The first ``n`` objects: the two defaults, then seeded random movers.

    Extra objects get a ground-level centre inside the extent, a planar
    translation of at most 1 m and a yaw of at most 5 degrees.
    """
    if n < 0:
        raise ValueError("object count must be non-negative")
    objs = default_objects()[:n]
    rng = np.random.default_rng([seed, 0x0B1EC7])
    half = np.asarray(extent[:2], dtype=np.float64) / 2 - 3.0
    while len(objs) < n:
        xy = rng.uniform(-half, half)
        heading = rng.uniform(0.0, 2 * np.pi)
        speed = rng.uniform(0.2, 1.0)
        objs.append(ObjectSpec(
            center=(float(xy[0]), float(xy[1]), 1.0),
            translation=(speed * np.cos(heading), speed * np.sin(heading), 0.0),
            rotation=(0.0, 0.0, float(np.deg2rad(rng.uniform(-5.0, 5.0)))),
        ))
    return objs


@dataclass
class SceneSpec:
    background_points: int = 10_000
    extent: tuple[float, float, float] = (40.0, 40.0, 4.0)
    background_translation: tuple[float, float, float] = (0.0, 0.0, 0.0)
    objects: list[ObjectSpec] = field(default_factory=default_objects)
    noise: float = 0.0
    seed: int = 0
    clearance: float = 1.0  # no background within this margin of an object, before or after it moves


@dataclass
class Scene:
    source: PointCloud
    target: PointCloud
    flow: FlowField
    labels: np.ndarray  # 0 = background, k = object k


def rigid_motion(points: np.ndarray, center, rotvec, translation) -> np.ndarray:
    c = np.asarray(center, dtype=np.float64)
    R = Rotation.from_rotvec(np.asarray(rotvec, dtype=np.float64)).as_matrix()
    return (points - c) @ R.T + c + np.asarray(translation, dtype=np.float64)


def sample_box_surface(rng: np.random.Generator, n: int, size) -> np.ndarray:
    """``n`` points uniform over the surface of a centred cuboid."""
    size = np.asarray(size, dtype=np.float64)
    sx, sy, sz = size
    areas = np.array([sy * sz, sy * sz, sx * sz, sx * sz, sx * sy, sx * sy])
    face = rng.choice(6, size=n, p=areas / areas.sum())
    pts = (rng.random((n, 3)) - 0.5) * size
    axis = face // 2
    sign = np.where(face % 2 == 0, -0.5, 0.5)
    pts[np.arange(n), axis] = sign * size[axis]
    return pts


def _swept_boxes(objects, clearance: float) -> list[tuple[np.ndarray, np.ndarray]]:
    """Axis-aligned boxes covering each object before and after its motion."""
    boxes = []
    signs = np.array(np.meshgrid([-0.5, 0.5], [-0.5, 0.5], [-0.5, 0.5])).reshape(3, -1).T
    for obj in objects:
        corners = np.asarray(obj.center) + signs * np.asarray(obj.size)
        both = np.vstack([corners, rigid_motion(corners, obj.center, obj.rotation, obj.translation)])
        boxes.append((both.min(axis=0) - clearance, both.max(axis=0) + clearance))
    return boxes


def _sample_background(rng, n: int, lo, ext, keep_out) -> np.ndarray:
    out = np.empty((0, 3))
    while len(out) < n:
        cand = lo + rng.random((n - len(out), 3)) * ext
        ok = np.ones(len(cand), dtype=bool)
        for bmin, bmax in keep_out:
            ok &= ~np.all((cand >= bmin) & (cand <= bmax), axis=1)
        out = np.vstack([out, cand[ok]])
    return out


def generate(spec: SceneSpec) -> Scene:
    if spec.clearance < 0 or spec.noise < 0:
        raise ValueError("clearance and noise must be non-negative")
    rng = np.random.default_rng(spec.seed)
    ext = np.asarray(spec.extent, dtype=np.float64)
    lo = np.array([-ext[0] / 2, -ext[1] / 2, 0.0])
    parts, moved, labels = [], [], []
    if spec.background_points:
        bg = _sample_background(rng, spec.background_points, lo, ext, _swept_boxes(spec.objects, spec.clearance))
        parts.append(bg)
        moved.append(bg + np.asarray(spec.background_translation, dtype=np.float64))
        labels.append(np.zeros(len(bg), dtype=np.int32))
    for k, obj in enumerate(spec.objects, start=1):
        pts = np.asarray(obj.center, dtype=np.float64) + sample_box_surface(rng, obj.points, obj.size)
        parts.append(pts)
        moved.append(rigid_motion(pts, obj.center, obj.rotation, obj.translation))
        labels.append(np.full(len(pts), k, dtype=np.int32))
    src = np.concatenate(parts)
    tgt_clean = np.concatenate(moved)
    tgt = tgt_clean + rng.normal(0.0, spec.noise, tgt_clean.shape) if spec.noise > 0 else tgt_clean
    return Scene(PointCloud(src), PointCloud(tgt), FlowField(tgt_clean - src), np.concatenate(labels))
