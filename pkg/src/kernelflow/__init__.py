"""Scene flow as a kernel expansion ``K @ alpha`` fitted at runtime."""

import os as _os

# BLAS reads its thread count once, when numpy first loads.
_threads = _os.environ.get("KERNELFLOW_NUM_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

__version__ = "0.1.0"

from ._backend import BACKEND  # noqa: E402
from .core import Aabb, ContractError, FlowField, PointCloud, apply_flow, bounding_box  # noqa: E402
from .embed import PeatWeights, RffEncoder, peat_forward, peat_knn_forward, rff_encode  # noqa: E402
from .kernel import KernelKind, apply_coefficients, grid_supports, kernel_matrix  # noqa: E402
from .loss import build_dt, chamfer, dt_loss  # noqa: E402
from .metrics import MetricReport  # noqa: E402
from .optimize import OptimConfig, closed_form_alpha, optimize_alpha  # noqa: E402
from .pipeline import Estimate, RunConfig, estimate  # noqa: E402
from .synth import SceneSpec, generate  # noqa: E402

__all__ = [
    "BACKEND",
    "Aabb",
    "ContractError",
    "Estimate",
    "FlowField",
    "KernelKind",
    "MetricReport",
    "OptimConfig",
    "PeatWeights",
    "PointCloud",
    "RffEncoder",
    "RunConfig",
    "SceneSpec",
    "apply_coefficients",
    "apply_flow",
    "bounding_box",
    "build_dt",
    "chamfer",
    "closed_form_alpha",
    "dt_loss",
    "estimate",
    "generate",
    "grid_supports",
    "kernel_matrix",
    "optimize_alpha",
    "peat_forward",
    "peat_knn_forward",
    "rff_encode",
]
