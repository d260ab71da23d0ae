"""Kernel backend selection.

Prefers the compiled extension, falls back to pure numpy. Set
CROSSVIEW_EVAL_PURE=1 to force the fallback (used by the benchmark and to
debug numerical questions without rebuilding).
"""

from __future__ import annotations

import os

from ._kernels_py import JacobiConvergenceError  # noqa: F401  (canonical error type)

if os.environ.get("CROSSVIEW_EVAL_PURE"):
    BACKEND = "pure"
    from ._kernels_py import jacobi_eigh, sep_conv2d_valid
else:
    try:
        from ._speedups import jacobi_eigh, sep_conv2d_valid

        BACKEND = "compiled"
    except ImportError:
        BACKEND = "pure"
        from ._kernels_py import jacobi_eigh, sep_conv2d_valid

__all__ = ["BACKEND", "JacobiConvergenceError", "jacobi_eigh", "sep_conv2d_valid"]
