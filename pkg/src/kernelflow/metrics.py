"""Scene flow metrics and wall-clock timing."""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import ContractError, FlowField

NORM_FLOOR = 1e-12


def _pair(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    a = pred.vectors if isinstance(pred, FlowField) else np.asarray(pred, dtype=np.float64)
    b = gt.vectors if isinstance(gt, FlowField) else np.asarray(gt, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractError(f"flow shapes differ: {a.shape} vs {b.shape}")
    return a, b


def epe(pred, gt) -> float:
    """Mean end-point error in meters."""
    a, b = _pair(pred, gt)
    return float(np.linalg.norm(a - b, axis=1).mean())


def accuracy(pred, gt, abs_threshold: float, rel_threshold: float) -> float:
    """Percentage of points whose error is below ``abs_threshold`` meters or
    below ``rel_threshold`` times the ground-truth magnitude.

    Static ground-truth points (zero norm) only get the absolute test.
    """
    if not (abs_threshold > 0 and rel_threshold > 0):
        raise ContractError("thresholds must be positive")
    a, b = _pair(pred, gt)
    err = np.linalg.norm(a - b, axis=1)
    gnorm = np.linalg.norm(b, axis=1)
    moving = gnorm > NORM_FLOOR
    rel_ok = np.zeros_like(moving)
    rel_ok[moving] = err[moving] / gnorm[moving] < rel_threshold
    return float(100.0 * np.mean((err < abs_threshold) | rel_ok))


def acc_strict(pred, gt) -> float:
    return accuracy(pred, gt, 0.05, 0.05)


def acc_relaxed(pred, gt) -> float:
    return accuracy(pred, gt, 0.1, 0.1)


def angle_error(pred, gt) -> float:
    """Mean angle in radians between predicted and true flow directions.

    Points where both vectors vanish count as 0; where exactly one does, pi/2.
    """
    a, b = _pair(pred, gt)
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    ua = a / np.maximum(na, NORM_FLOOR)[:, None]
    ub = b / np.maximum(nb, NORM_FLOOR)[:, None]
    ang = np.arccos(np.clip(np.einsum("ij,ij->i", ua, ub), -1.0, 1.0))
    ang[(na < NORM_FLOOR) & (nb < NORM_FLOOR)] = 0.0
    ang[(na < NORM_FLOOR) ^ (nb < NORM_FLOOR)] = np.pi / 2
    return float(ang.mean())


def time_run(fn: Callable[[], object]) -> float:
    """Wall-clock seconds taken by ``fn()``."""
    t0 = time.perf_counter()
    fn()
    return time.perf_counter() - t0


def time_repeated(fn: Callable[[], object], repeats: int = 5) -> dict:
    samples = [time_run(fn) for _ in range(repeats)]
    return {
        "mean_s": statistics.fmean(samples),
        "var_s2": statistics.pvariance(samples) if len(samples) > 1 else 0.0,
        "samples_s": samples,
    }


@dataclass(frozen=True)
class MetricReport:
    epe: float
    acc_strict: float
    acc_relaxed: float
    angle_error: float
    time_seconds: float

    @classmethod
    def compute(cls, pred, gt, time_seconds: float = 0.0) -> "MetricReport":
        return cls(epe(pred, gt), acc_strict(pred, gt), acc_relaxed(pred, gt),
                   angle_error(pred, gt), time_seconds)

    def to_json(self) -> dict:
        return {
            "epe_m": self.epe,
            "acc5_pct": self.acc_strict,
            "acc10_pct": self.acc_relaxed,
            "angle_rad": self.angle_error,
            "time_s": self.time_seconds,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "MetricReport":
        return cls(obj["epe_m"], obj["acc5_pct"], obj["acc10_pct"], obj["angle_rad"], obj["time_s"])
