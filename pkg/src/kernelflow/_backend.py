"""Pick the compiled distance-transform kernels when they are built.

Set ``KERNELFLOW_BACKEND=python`` to force the numpy fallback.
"""

import os

from . import _fallback

BACKEND = "python"
impl = _fallback

if os.environ.get("KERNELFLOW_BACKEND", "").lower() != "python":
    try:
        from ._ext import _core as impl  # noqa: F811

        BACKEND = "cython"
    except ImportError:
        impl = _fallback

squared_edt = impl.squared_edt
trilinear = impl.trilinear


def available_backends() -> dict:
    found = {"python": _fallback}
    try:
        from ._ext import _core

        found["cython"] = _core
    except ImportError:
        pass
    return found
