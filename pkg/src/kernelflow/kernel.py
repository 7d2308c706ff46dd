"""Supporting points, kernel matrices and the coefficient-to-flow map."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import expit

from .core import Aabb, ContractError, FlowField
from .embed import EmbeddedCloud, row_softmax

KERNELS = ("rbf", "sinc", "softmax", "sigmoid", "tanh", "laplacian")
_SCALED = ("rbf", "sinc", "laplacian")
_DISTANCE = ("rbf", "sinc", "laplacian")


@dataclass(frozen=True)
class SupportSet:
    points: np.ndarray
    source: str
    origin: tuple[float, float, float] | None = None
    spacing: tuple[float, float, float] | None = None
    counts: tuple[int, int, int] | None = None

    def __post_init__(self):
        if self.points.ndim != 2 or self.points.shape[1] != 3 or len(self.points) < 1:
            raise ContractError("support set must be a non-empty (M, 3) array")
        if self.source not in ("grid", "target-points"):
            raise ContractError(f"unknown support source {self.source!r}")

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class KernelKind:
    """Kernel family plus its scale.

    ``sigma`` is ignored by the inner-product kernels (softmax, sigmoid,
    tanh). ``sinc_squared`` selects ``d = sigma * |x - y|**2`` for sinc;
    when false the unsquared distance is used.
    """

    name: str = "rbf"
    sigma: float = 1.0
    sinc_squared: bool = True

    def __post_init__(self):
        if self.name not in KERNELS:
            raise ContractError(f"unknown kernel {self.name!r}; choose from {', '.join(KERNELS)}")
        if self.name in _SCALED and not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise ContractError(f"{self.name} kernel needs sigma > 0, got {self.sigma}")


def grid_counts(box: Aabb, spacing: float, max_per_axis: int = 40) -> tuple[int, int, int]:
    """Lattice counts giving roughly ``spacing`` between neighbours on each axis."""
    if not spacing > 0:
        raise ContractError(f"grid spacing must be positive, got {spacing}")
    counts = np.floor(box.extent / spacing + 1e-9).astype(int) + 1
    return tuple(int(c) for c in np.clip(counts, 1, max_per_axis))


def grid_supports(box: Aabb, counts) -> SupportSet:
    """Regular lattice spanning ``box`` inclusively, x varying fastest."""
    counts = tuple(int(c) for c in counts)
    if len(counts) != 3 or min(counts) < 1:
        raise ContractError(f"grid counts must be three integers >= 1, got {counts}")
    if not isinstance(box, Aabb):
        raise ContractError("grid_supports needs an Aabb")
    axes = []
    spacing = []
    for lo, hi, n in zip(box.min, box.max, counts):
        if n == 1:
            axes.append(np.array([(lo + hi) / 2.0]))
            spacing.append(0.0)
        else:
            axes.append(np.linspace(lo, hi, n))
            spacing.append((hi - lo) / (n - 1))
    zz, yy, xx = np.meshgrid(axes[2], axes[1], axes[0], indexing="ij")
    pts = np.stack([xx.ravel(), yy.ravel(), zz.ravel()], axis=1)
    return SupportSet(pts, "grid", box.min, tuple(spacing), counts)


def target_supports(points: np.ndarray) -> SupportSet:
    return SupportSet(np.array(points, dtype=np.float64), "target-points")


def _sq_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape[1] <= 16:
        return cdist(a, b, "sqeuclidean")
    d2 = np.einsum("ij,ij->i", a, a)[:, None] + np.einsum("ij,ij->i", b, b)[None, :]
    d2 -= 2.0 * (a @ b.T)
    np.maximum(d2, 0.0, out=d2)
    return d2


def kernel_matrix(source: EmbeddedCloud, support: EmbeddedCloud, kind: KernelKind) -> np.ndarray:
    """``N x M`` similarity between source rows and support rows."""
    a, b = source.rows, support.rows
    if a.shape[1] != b.shape[1]:
        raise ContractError(f"feature dimensions differ: {a.shape[1]} vs {b.shape[1]}")
    if kind.name in _DISTANCE:
        d2 = _sq_distances(a, b)
        if kind.name == "rbf":
            k = np.exp(d2 * (-0.5 / kind.sigma**2))
        elif kind.name == "laplacian":
            k = np.exp(-np.sqrt(d2) / kind.sigma)
        else:
            d = kind.sigma * (d2 if kind.sinc_squared else np.sqrt(d2))
            k = np.sinc(d)
    else:
        ip = a @ b.T
        if kind.name == "softmax":
            k = row_softmax(ip)
        elif kind.name == "sigmoid":
            k = expit(ip)
        else:
            k = np.tanh(ip)
    k.flags.writeable = False
    return k


def apply_coefficients(K: np.ndarray, alpha: np.ndarray) -> FlowField:
    """Flow ``K @ alpha``: each point's displacement is a kernel-weighted sum."""
    return FlowField(coefficient_flow(K, alpha))


def coefficient_flow(K: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    alpha = np.asarray(alpha)
    if K.ndim != 2 or alpha.ndim != 2 or alpha.shape[1] != 3 or K.shape[1] != alpha.shape[0]:
        raise ContractError(f"cannot apply coefficients {alpha.shape} to kernel {K.shape}")
    # (alpha^T K^T)^T streams K row-major; about 1.5x faster than K @ alpha for 3 columns
    return (np.ascontiguousarray(alpha.T) @ K.T).T


def pull_back(K: np.ndarray, point_grad: np.ndarray) -> np.ndarray:
    """``K^T @ point_grad``: per-point gradients mapped onto the coefficients."""
    return (np.ascontiguousarray(point_grad.T) @ K).T
