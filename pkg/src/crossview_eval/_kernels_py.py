"""Pure-numpy implementations of the hot kernels.

Same contracts as crossview_eval._speedups; used when the compiled
extension is unavailable or CROSSVIEW_EVAL_PURE=1 is set.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class JacobiConvergenceError(RuntimeError):
    """Cyclic Jacobi failed to reach the off-diagonal tolerance."""


def jacobi_eigh(a, tol: float = 1e-10, max_sweeps: int = 60):
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Sweeps stop when the off-diagonal Frobenius norm drops below
    tol * ||A||_F of the input. Returns (eigenvalues, eigenvectors) with
    eigenvectors in columns, unsorted.
    """
    a = np.array(a, dtype=np.float64, order="C")
    n = a.shape[0]
    v = np.eye(n)
    if n == 1:
        return a.diagonal().copy(), v
    fro = math.sqrt(float(np.sum(a * a)))
    if fro == 0.0:
        return np.zeros(n), v
    threshold = tol * fro
    for _ in range(max_sweeps):
        off = math.sqrt(2.0 * float(np.sum(np.triu(a, 1) ** 2)))
        if off <= threshold:
            return a.diagonal().copy(), v
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                row_p = a[p, :].copy()
                row_q = a[q, :].copy()
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                col_p = a[:, p].copy()
                col_q = a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                a[p, q] = 0.0
                a[q, p] = 0.0
                v_p = v[:, p].copy()
                v_q = v[:, q].copy()
                v[:, p] = c * v_p - s * v_q
                v[:, q] = s * v_p + c * v_q
    off = math.sqrt(2.0 * float(np.sum(np.triu(a, 1) ** 2)))
    if off <= threshold:
        return a.diagonal().copy(), v
    raise JacobiConvergenceError(
        f"Jacobi did not converge in {max_sweeps} sweeps (off-diagonal {off:.3e}, "
        f"threshold {threshold:.3e})"
    )


def sep_conv2d_valid(img, kernel):
    """Valid-mode separable 2-D correlation: rows then columns with `kernel`."""
    img = np.asarray(img, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    m = kernel.shape[0]
    if img.shape[0] < m or img.shape[1] < m:
        raise ValueError(f"image {img.shape} smaller than kernel length {m}")
    rows = sliding_window_view(img, m, axis=1) @ kernel
    return sliding_window_view(rows, m, axis=0) @ kernel
