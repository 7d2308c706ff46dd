"""Runtime fitting of the coefficient matrix ``alpha`` (M x 3).

The kernel matrix is fixed; only ``alpha`` moves. The objective is a data
term on the deformed source ``p + K @ alpha`` plus ``lambda * |alpha|_1``,
minimised with Adam using the subgradient ``sign(alpha)`` (``sign(0) = 0``).
"""

from __future__ import annotations

import json
import logging
import math
import time
import warnings
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg

from .core import ContractError, PointCloud
from .kernel import coefficient_flow, pull_back
from .loss import (
    DistanceTransformGrid,
    LossReport,
    SpatialIndex,
    chamfer,
    dt_loss,
    least_squares,
)

log = logging.getLogger(__name__)


class OptimizationError(RuntimeError):
    def __init__(self, message: str, trace: "OptimTrace | None" = None):
        super().__init__(message)
        self.trace = trace


class SingularSystemError(np.linalg.LinAlgError):
    pass


# ---------------------------------------------------------------------------
# data terms


class DataTerm:
    """Loss on deformed source points. Subclasses implement ``evaluate``."""

    def __init__(self, source):
        self.source = source.points if isinstance(source, PointCloud) else np.asarray(source, dtype=np.float64)

    def evaluate(self, deformed: np.ndarray) -> LossReport:
        raise NotImplementedError

    def __call__(self, flow: np.ndarray) -> LossReport:
        return self.evaluate(self.source + flow)


class ChamferTerm(DataTerm):
    def __init__(self, source, target, bidirectional: bool = False, workers: int = 1):
        super().__init__(source)
        self.index = SpatialIndex(target, workers=workers)
        self.bidirectional = bidirectional

    def evaluate(self, deformed):
        return chamfer(deformed, self.index.points, self.bidirectional, index=self.index)


class DtTerm(DataTerm):
    def __init__(self, source, grid: DistanceTransformGrid):
        super().__init__(source)
        self.grid = grid

    def evaluate(self, deformed):
        return dt_loss(deformed, self.grid)


class LeastSquaresTerm(DataTerm):
    """Known-correspondence term ``mean |p' - (p + flow_gt)|^2``."""

    def __init__(self, source, flow_gt):
        super().__init__(source)
        self.goal = self.source + np.asarray(flow_gt, dtype=np.float64)

    def evaluate(self, deformed):
        return least_squares(deformed, self.goal)


# ---------------------------------------------------------------------------


@dataclass
class OptimConfig:
    learning_rate: float = 0.01
    max_iters: int = 500
    lambda_l1: float = 1e-4
    early_stop_patience: int = 30
    early_stop_min_delta: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ContractError("learning_rate must be positive")
        if self.max_iters < 0 or self.early_stop_patience < 1:
            raise ContractError("max_iters must be >= 0 and early_stop_patience >= 1")
        if self.lambda_l1 < 0 or self.early_stop_min_delta < 0:
            raise ContractError("lambda_l1 and early_stop_min_delta must be non-negative")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.epsilon > 0):
            raise ContractError("invalid Adam hyper-parameters")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def like(cls, alpha: np.ndarray) -> "AdamState":
        return cls(np.zeros_like(alpha), np.zeros_like(alpha))

    def step(self, alpha: np.ndarray, grad: np.ndarray, cfg: OptimConfig) -> np.ndarray:
        self.t += 1
        self.m = cfg.beta1 * self.m + (1 - cfg.beta1) * grad
        self.v = cfg.beta2 * self.v + (1 - cfg.beta2) * grad * grad
        m_hat = self.m / (1 - cfg.beta1**self.t)
        v_hat = self.v / (1 - cfg.beta2**self.t)
        return alpha - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.epsilon)


@dataclass
class TraceRecord:
    iteration: int
    data_loss: float
    l1_term: float
    total: float
    wall_ms: float


@dataclass
class OptimTrace:
    records: list[TraceRecord] = field(default_factory=list)
    stop_reason: str = "max-iters"
    best_iteration: int = -1

    def __len__(self) -> int:
        return len(self.records)

    @property
    def totals(self) -> np.ndarray:
        return np.array([r.total for r in self.records])

    def write_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for r in self.records:
                fh.write(json.dumps(asdict(r)) + "\n")

    def summary(self) -> dict:
        if not self.records:
            return {"iterations": 0, "stop_reason": self.stop_reason}
        totals = self.totals
        return {
            "iterations": len(self.records),
            "stop_reason": self.stop_reason,
            "initial_loss": float(totals[0]),
            "final_loss": float(totals[-1]),
            "best_loss": float(totals.min()),
            "best_iteration": self.best_iteration,
        }


def _evaluate(K: np.ndarray, alpha: np.ndarray, term: DataTerm | None, lam: float):
    if term is None:
        data, g_data = 0.0, np.zeros_like(alpha)
    else:
        rep = term(coefficient_flow(K, alpha))
        data, g_data = rep.value, pull_back(K, rep.gradient)
    l1 = lam * float(np.abs(alpha).sum())
    return data, l1, g_data + lam * np.sign(alpha)


def objective(K: np.ndarray, alpha: np.ndarray, term: DataTerm | None, lam: float):
    """Return ``(value, gradient)`` of data loss plus ``lam * |alpha|_1``."""
    alpha = np.asarray(alpha, dtype=np.float64)
    if K.shape[1] != alpha.shape[0] or alpha.shape[1:] != (3,):
        raise ContractError(f"alpha {alpha.shape} does not fit kernel {K.shape}")
    if term is not None and len(term.source) != K.shape[0]:
        raise ContractError("kernel rows and data-term source differ in length")
    data, l1, grad = _evaluate(K, alpha, term, lam)
    return data + l1, grad


def optimize_alpha(
    K: np.ndarray,
    term: DataTerm | None,
    config: OptimConfig | None = None,
    callback: Callable[[TraceRecord], None] | None = None,
):
    """Adam on ``alpha`` from zero; returns the best ``alpha`` seen and the trace."""
    cfg = config or OptimConfig()
    alpha = np.zeros((K.shape[1], 3))
    best_alpha = alpha.copy()
    trace = OptimTrace()
    state = AdamState.like(alpha)
    best = math.inf
    anchor = math.inf  # best value that counted as a real improvement
    stale = 0
    t0 = time.perf_counter()
    for it in range(cfg.max_iters):
        data, l1, grad = _evaluate(K, alpha, term, cfg.lambda_l1)
        total = data + l1
        rec = TraceRecord(it, data, l1, total, (time.perf_counter() - t0) * 1e3)
        trace.records.append(rec)
        if callback is not None:
            callback(rec)
        if not (math.isfinite(total) and np.all(np.isfinite(grad))):
            trace.stop_reason = "non-finite"
            raise OptimizationError(f"non-finite objective at iteration {it}", trace)
        if total < best:
            best = total
            best_alpha = alpha
            trace.best_iteration = it
        if total < anchor - cfg.early_stop_min_delta * abs(anchor) or not math.isfinite(anchor):
            anchor = total
            stale = 0
        else:
            stale += 1
            if stale >= cfg.early_stop_patience:
                trace.stop_reason = "early-stop"
                break
        alpha = state.step(alpha, grad, cfg)
    log.debug("optimize_alpha: %s", trace.summary())
    return best_alpha.copy(), trace


def closed_form_alpha(K: np.ndarray, flow_gt, delta: float = 1e-8) -> np.ndarray:
    """Ridge solution of ``min |K alpha - flow_gt|^2 + delta |alpha|^2``."""
    f = np.asarray(flow_gt, dtype=np.float64)
    if f.shape != (K.shape[0], 3):
        raise ContractError(f"flow_gt shape {f.shape} does not match kernel rows {K.shape[0]}")
    if delta < 0:
        raise ContractError("delta must be non-negative")
    gram = K.T @ K
    gram[np.diag_indices_from(gram)] += delta
    rhs = K.T @ f
    try:
        with warnings.catch_warnings():
            if delta == 0:
                warnings.simplefilter("error", scipy.linalg.LinAlgWarning)
            return scipy.linalg.solve(gram, rhs, assume_a="pos")
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgWarning) as exc:
        raise SingularSystemError(
            f"normal equations are singular ({exc}); use a ridge delta > 0"
        ) from None
