"""Data terms on deformed source points: Chamfer distance and the
distance-transform (DT) loss. Each returns the value and its gradient with
respect to the deformed points."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from . import _backend
from .core import Aabb, ContractError, PointCloud

DEFAULT_VOXEL_BUDGET = 512**3


@dataclass(frozen=True)
class LossReport:
    value: float
    gradient: np.ndarray


def _points(x) -> np.ndarray:
    return x.points if isinstance(x, PointCloud) else np.asarray(x, dtype=np.float64)


class SpatialIndex:
    """Exact nearest-neighbour lookup over a fixed point set.

    Among equidistant neighbours the lowest index wins, provided no more than
    ``ties`` points share the minimum distance.
    """

    def __init__(self, points, workers: int = 1, ties: int = 4):
        self.points = _points(points)
        self._tree = cKDTree(self.points)
        self._k = min(ties, len(self.points))
        self.workers = workers

    def __len__(self) -> int:
        return len(self.points)

    def nearest(self, queries) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(squared_distance, index)`` of each query's nearest point."""
        q = _points(queries)
        dist, idx = self._tree.query(q, k=self._k, workers=self.workers)
        if self._k > 1:
            tied = dist == dist[:, :1]
            idx = np.where(tied, idx, np.iinfo(idx.dtype).max).min(axis=1)
        diff = q - self.points[idx]
        return np.einsum("ij,ij->i", diff, diff), idx


def chamfer(deformed, target, bidirectional: bool = False, index: SpatialIndex | None = None) -> LossReport:
    """Mean squared nearest-neighbour distance from ``deformed`` to ``target``.

    With ``bidirectional`` the target-to-deformed term is added, its gradient
    landing on whichever deformed point each target point matched.
    """
    p = _points(deformed)
    t = _points(target)
    if len(p) == 0 or len(t) == 0:
        raise ContractError("chamfer needs two non-empty clouds")
    if index is None:
        index = SpatialIndex(t)
    n = len(p)
    d2, nn = index.nearest(p)
    value = d2.mean()
    grad = (2.0 / n) * (p - index.points[nn])
    if bidirectional:
        d2b, nnb = SpatialIndex(p, workers=index.workers).nearest(t)
        value += d2b.mean()
        np.add.at(grad, nnb, (2.0 / len(t)) * (p[nnb] - t))
    return LossReport(float(value), grad)


@dataclass(frozen=True)
class DistanceTransformGrid:
    """Per-voxel distance (meters) to the nearest occupied voxel centre.

    ``values`` is indexed ``[z, y, x]``; voxel ``(i, j, k)`` has its centre at
    ``origin + (i + 0.5, j + 0.5, k + 0.5) * spacing``.
    """

    origin: tuple[float, float, float]
    spacing: float
    dims: tuple[int, int, int]
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != tuple(reversed(self.dims)):
            raise ContractError(f"values shape {self.values.shape} does not match dims {self.dims}")

    def to_voxel(self, points: np.ndarray) -> np.ndarray:
        """Continuous voxel-centre coordinates of ``points``."""
        return (points - np.asarray(self.origin)) / self.spacing - 0.5

    def centers(self) -> np.ndarray:
        gx, gy, gz = self.dims
        zz, yy, xx = np.meshgrid(np.arange(gz), np.arange(gy), np.arange(gx), indexing="ij")
        idx = np.stack([xx.ravel(), yy.ravel(), zz.ravel()], axis=1)
        return np.asarray(self.origin) + (idx + 0.5) * self.spacing


def voxel_dims(box: Aabb, spacing: float) -> tuple[int, int, int]:
    return tuple(max(1, int(math.ceil(e / spacing - 1e-9))) for e in box.extent)


def occupancy(points: np.ndarray, box: Aabb, spacing: float, dims) -> np.ndarray:
    """Voxel index ``(x, y, z)`` of every point."""
    idx = np.floor((points - np.asarray(box.min)) / spacing).astype(np.int64)
    # points on the max face belong to the last voxel
    return np.minimum(idx, np.asarray(dims) - 1)


def build_dt(target, box: Aabb, spacing: float, max_voxels: int = DEFAULT_VOXEL_BUDGET) -> DistanceTransformGrid:
    """Exact Euclidean distance transform of the target occupancy grid."""
    if not spacing > 0:
        raise ContractError(f"DT spacing must be positive, got {spacing}")
    t = _points(target)
    dims = voxel_dims(box, spacing)
    total = dims[0] * dims[1] * dims[2]
    if total > max_voxels:
        suggest = spacing * (total / max_voxels) ** (1.0 / 3.0) * 1.01
        raise ContractError(
            f"DT grid {dims} has {total} voxels, over the budget of {max_voxels}; "
            f"try spacing >= {suggest:.4g}"
        )
    if not np.all(box.contains(t)):
        raise ContractError("DT box does not cover every target point")
    idx = occupancy(t, box, spacing, dims)
    grid = np.full(tuple(reversed(dims)), np.inf)
    grid[idx[:, 2], idx[:, 1], idx[:, 0]] = 0.0
    _backend.squared_edt(grid)
    np.sqrt(grid, out=grid)
    grid *= spacing
    grid.flags.writeable = False
    return DistanceTransformGrid(box.min, float(spacing), dims, grid)


def dt_loss(deformed, grid: DistanceTransformGrid) -> LossReport:
    """Mean trilinearly interpolated DT value at the deformed points."""
    p = _points(deformed)
    val, g = _backend.trilinear(grid.values, grid.to_voxel(p))
    n = len(p)
    return LossReport(float(val.mean()), g / (grid.spacing * n))


def least_squares(deformed, goal) -> LossReport:
    """``mean |p' - goal|^2``: a data term with known correspondences."""
    p = _points(deformed)
    r = p - _points(goal)
    n = len(p)
    return LossReport(float(np.einsum("ij,ij->", r, r) / n), (2.0 / n) * r)
