"""Point clouds, flow fields and axis-aligned boxes.

Everything downstream works on ``(N, 3)`` float64 arrays. The containers here
validate shape and finiteness once, at construction, and then freeze the
underlying buffer so that an instance can be shared freely.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np


class ContractError(ValueError):
    """Raised when arguments violate a shape or length contract."""


def _as_frozen_points(values, what: str) -> np.ndarray:
    arr = np.array(values, dtype=np.float64, copy=True)
    if arr.ndim == 1 and arr.size == 3:
        arr = arr.reshape(1, 3)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ContractError(f"{what} must have shape (N, 3), got {arr.shape}")
    if arr.shape[0] == 0:
        raise ContractError(f"{what} must contain at least one entry")
    if not np.all(np.isfinite(arr)):
        raise ContractError(f"{what} contains non-finite values")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Ordered set of 3D points in meters."""

    points: np.ndarray

    def __init__(self, points):
        object.__setattr__(self, "points", _as_frozen_points(points, "PointCloud"))

    def __len__(self) -> int:
        return self.points.shape[0]

    def __array__(self, dtype=None, copy=None):
        return self.points if dtype is None else self.points.astype(dtype)


@dataclass(frozen=True, eq=False)
class FlowField:
    """Per-point displacement vectors, index-aligned with a source cloud."""

    vectors: np.ndarray

    def __init__(self, vectors):
        object.__setattr__(self, "vectors", _as_frozen_points(vectors, "FlowField"))

    def __len__(self) -> int:
        return self.vectors.shape[0]

    def __array__(self, dtype=None, copy=None):
        return self.vectors if dtype is None else self.vectors.astype(dtype)

    def __neg__(self) -> "FlowField":
        return FlowField(-self.vectors)

    @classmethod
    def zeros(cls, n: int) -> "FlowField":
        return cls(np.zeros((n, 3)))


@dataclass(frozen=True)
class Aabb:
    min: tuple[float, float, float]
    max: tuple[float, float, float]

    def __post_init__(self):
        lo = np.asarray(self.min, dtype=np.float64)
        hi = np.asarray(self.max, dtype=np.float64)
        if lo.shape != (3,) or hi.shape != (3,):
            raise ContractError("Aabb corners must be 3-vectors")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ContractError("Aabb corners must be finite")
        if np.any(lo > hi):
            raise ContractError(f"Aabb min {tuple(lo)} exceeds max {tuple(hi)}")
        object.__setattr__(self, "min", tuple(float(v) for v in lo))
        object.__setattr__(self, "max", tuple(float(v) for v in hi))

    @property
    def extent(self) -> np.ndarray:
        return np.subtract(self.max, self.min)

    def contains(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points)
        return np.all((points >= self.min) & (points <= self.max), axis=-1)


def apply_flow(source: PointCloud, flow: FlowField) -> PointCloud:
    """Return ``source + flow`` point by point."""
    if len(source) != len(flow):
        raise ContractError(
            f"flow length {len(flow)} does not match cloud length {len(source)}"
        )
    return PointCloud(source.points + flow.vectors)


def bounding_box(clouds: PointCloud | Iterable[PointCloud], padding: float = 0.0) -> Aabb:
    """Smallest box covering every point of ``clouds``, grown by ``padding``."""
    if isinstance(clouds, PointCloud):
        clouds = [clouds]
    clouds = list(clouds)
    if not clouds:
        raise ContractError("bounding_box needs at least one cloud")
    if padding < 0:
        raise ContractError(f"padding must be non-negative, got {padding}")
    lo = np.min([c.points.min(axis=0) for c in clouds], axis=0) - padding
    hi = np.max([c.points.max(axis=0) for c in clouds], axis=0) + padding
    return Aabb(tuple(lo), tuple(hi))
