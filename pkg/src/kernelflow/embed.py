"""Per-point embeddings: raw coordinates, random Fourier features and the
positional-embedding attention block (full and k-NN restricted)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .core import ContractError, PointCloud

EMBEDDINGS = ("identity", "rff", "peat", "peat-knn")


def seeded_normal(seed: int, shape, scale: float = 1.0) -> np.ndarray:
    """Gaussian samples from a Philox stream via the Box-Muller transform.

    Philox is counter-based, so the stream for a given seed is the same on
    every platform numpy supports.
    """
    count = int(np.prod(shape))
    pairs = (count + 1) // 2
    gen = np.random.Generator(np.random.Philox(int(seed)))
    u = gen.random((2, pairs))
    u1 = 1.0 - u[0]  # (0, 1], keeps log finite
    radius = np.sqrt(-2.0 * np.log(u1))
    angle = 2.0 * np.pi * u[1]
    z = np.concatenate([radius * np.cos(angle), radius * np.sin(angle)])[:count]
    return scale * z.reshape(shape)


@dataclass(frozen=True)
class EmbeddedCloud:
    rows: np.ndarray
    kind: str

    def __post_init__(self):
        if self.rows.ndim != 2:
            raise ContractError("embedding rows must be a 2D matrix")
        if self.kind not in EMBEDDINGS:
            raise ContractError(f"unknown embedding kind {self.kind!r}")

    def __len__(self) -> int:
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.shape[1]


@dataclass(frozen=True)
class RffEncoder:
    """Random Fourier feature map ``p -> [cos(2 pi B p), sin(2 pi B p)]``.

    ``B`` has ``output_dim // 2`` rows drawn from N(0, scale**2).
    """

    output_dim: int = 128
    scale: float = 1.0
    seed: int = 0
    frequencies: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.output_dim <= 0 or self.output_dim % 2:
            raise ContractError(f"output_dim must be a positive even integer, got {self.output_dim}")
        if not self.scale > 0:
            raise ContractError(f"scale must be positive, got {self.scale}")
        b = seeded_normal(self.seed, (self.output_dim // 2, 3), self.scale)
        b.flags.writeable = False
        object.__setattr__(self, "frequencies", b)


@dataclass(frozen=True)
class PeatWeights:
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray

    def __post_init__(self):
        mats = []
        for name in ("w_q", "w_k", "w_v"):
            m = np.array(getattr(self, name), dtype=np.float64)
            if m.ndim != 2:
                raise ContractError(f"{name} must be a matrix")
            if not np.all(np.isfinite(m)):
                raise ContractError(f"{name} has non-finite entries")
            m.flags.writeable = False
            object.__setattr__(self, name, m)
            mats.append(m)
        q, k, v = mats
        if q.shape != k.shape:
            raise ContractError(f"W_Q {q.shape} and W_K {k.shape} must share shape")
        if v.shape[0] != q.shape[0]:
            raise ContractError("W_V must have d_pe rows")

    @property
    def d_pe(self) -> int:
        return self.w_q.shape[0]

    @property
    def d_k(self) -> int:
        return self.w_q.shape[1]

    @property
    def d_v(self) -> int:
        return self.w_v.shape[1]

    @classmethod
    def random(cls, d_pe: int, d_k: int, d_v: int, seed: int = 0) -> "PeatWeights":
        """Untrained weights, N(0, 1/d_pe) entries."""
        s = 1.0 / np.sqrt(d_pe)
        return cls(
            seeded_normal(seed, (d_pe, d_k), s),
            seeded_normal(seed + 1, (d_pe, d_k), s),
            seeded_normal(seed + 2, (d_pe, d_v), s),
        )


def embed_identity(cloud: PointCloud) -> EmbeddedCloud:
    return EmbeddedCloud(np.array(cloud.points), "identity")


def _rff_rows(points: np.ndarray, encoder: RffEncoder) -> np.ndarray:
    proj = 2.0 * np.pi * (points @ encoder.frequencies.T)
    return np.concatenate([np.cos(proj), np.sin(proj)], axis=1)


def rff_encode(cloud: PointCloud, encoder: RffEncoder) -> EmbeddedCloud:
    return EmbeddedCloud(_rff_rows(cloud.points, encoder), "rff")


def row_softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _check_pe(pe: RffEncoder, weights: PeatWeights) -> None:
    if pe.output_dim != weights.d_pe:
        raise ContractError(
            f"positional encoding width {pe.output_dim} != weight input width {weights.d_pe}"
        )


def peat_attention(cloud: PointCloud, pe: RffEncoder, weights: PeatWeights) -> np.ndarray:
    """Full ``N x N`` attention map ``softmax(X Wq Wk^T X^T)``."""
    _check_pe(pe, weights)
    x = _rff_rows(cloud.points, pe)
    return row_softmax((x @ weights.w_q) @ (x @ weights.w_k).T)


def peat_forward(cloud: PointCloud, pe: RffEncoder, weights: PeatWeights) -> EmbeddedCloud:
    _check_pe(pe, weights)
    x = _rff_rows(cloud.points, pe)
    attn = row_softmax((x @ weights.w_q) @ (x @ weights.w_k).T)
    return EmbeddedCloud(attn @ (x @ weights.w_v), "peat")


def knn_sample(query, cloud: PointCloud, L: int) -> np.ndarray:
    """Indices of the ``L`` cloud points nearest to ``query``.

    Sorted by ascending distance; equal distances go to the lower index.
    """
    n = len(cloud)
    if not 1 <= L <= n:
        raise ContractError(f"L must lie in [1, {n}], got {L}")
    q = np.asarray(query, dtype=np.float64).reshape(3)
    d2 = np.sum((cloud.points - q) ** 2, axis=1)
    return np.argsort(d2, kind="stable")[:L]


def knn_table(cloud: PointCloud, L: int, slack: int = 4) -> np.ndarray:
    """``(N, L)`` neighbour table for every cloud point, self included.

    The tree is asked for ``L + slack`` candidates which are then re-sorted by
    (distance, index), so ties at the cut are resolved toward lower indices
    unless more than ``slack`` points tie there.
    """
    n = len(cloud)
    if not 1 <= L <= n:
        raise ContractError(f"L must lie in [1, {n}], got {L}")
    k = min(n, L + slack)
    dist, idx = cKDTree(cloud.points).query(cloud.points, k=k)
    if k == 1:
        return idx.reshape(n, 1)
    # lexsort uses the last key as primary
    order = np.lexsort((idx, dist), axis=1)
    return np.take_along_axis(idx, order, axis=1)[:, :L]


def peat_knn_forward(
    cloud: PointCloud,
    pe: RffEncoder,
    weights: PeatWeights,
    L: int,
    return_attention: bool = False,
):
    """Attention of each point restricted to its ``L`` nearest neighbours.

    The attention map is ``N x L`` rather than ``N x N``.
    """
    _check_pe(pe, weights)
    nbr = knn_table(cloud, L)
    x = _rff_rows(cloud.points, pe)
    q = x @ weights.w_q
    k = x @ weights.w_k
    v = x @ weights.w_v
    scores = np.einsum("nd,nld->nl", q, k[nbr])
    attn = row_softmax(scores)
    out = EmbeddedCloud(np.einsum("nl,nld->nd", attn, v[nbr]), "peat-knn")
    if return_attention:
        return out, attn
    return out
