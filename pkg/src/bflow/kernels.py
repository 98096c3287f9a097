"""Backend selection for the spline evaluation kernels.

The compiled extension is used when it imports; otherwise, or when the
environment variable ``BFLOW_PURE_PYTHON`` is set to a non-empty value, the
numpy implementation is used. ``BACKEND`` names the active choice.
"""
import os

from bflow import _kernels_py

if os.environ.get("BFLOW_PURE_PYTHON"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from bflow import _kernels as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"

eval_1d = _impl.eval_1d
eval_2d = _impl.eval_2d

__all__ = ["BACKEND", "eval_1d", "eval_2d"]
