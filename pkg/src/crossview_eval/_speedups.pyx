# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: cyclic Jacobi eigensolver and separable convolution.

Contracts mirror crossview_eval._kernels_py exactly.
"""

import numpy as np

from libc.math cimport sqrt

from crossview_eval._kernels_py import JacobiConvergenceError


def jacobi_eigh(a_in, double tol=1e-10, int max_sweeps=60):
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns (eigenvalues, eigenvectors) with eigenvectors in columns,
    unsorted. Converged when the off-diagonal Frobenius norm is below
    tol * ||A||_F of the input.
    """
    a_arr = np.array(a_in, dtype=np.float64, order="C")
    cdef double[:, ::1] a = a_arr
    cdef Py_ssize_t n = a.shape[0]
    v_arr = np.eye(n)
    cdef double[:, ::1] v = v_arr
    if n == 1:
        return np.asarray(a_arr).diagonal().copy(), v_arr

    cdef double fro = 0.0, off, apq, theta, t, c, s, tmp_p, tmp_q
    cdef Py_ssize_t i, p, q, sweep
    for p in range(n):
        for q in range(n):
            fro += a[p, q] * a[p, q]
    fro = sqrt(fro)
    if fro == 0.0:
        return np.zeros(n), v_arr
    cdef double threshold = tol * fro

    for sweep in range(max_sweeps):
        off = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                off += 2.0 * a[p, q] * a[p, q]
        off = sqrt(off)
        if off <= threshold:
            return np.diag(a_arr).copy(), v_arr
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if theta >= 0.0:
                    t = 1.0 / (theta + sqrt(theta * theta + 1.0))
                else:
                    t = -1.0 / (-theta + sqrt(theta * theta + 1.0))
                c = 1.0 / sqrt(t * t + 1.0)
                s = t * c
                for i in range(n):
                    tmp_p = a[p, i]
                    tmp_q = a[q, i]
                    a[p, i] = c * tmp_p - s * tmp_q
                    a[q, i] = s * tmp_p + c * tmp_q
                for i in range(n):
                    tmp_p = a[i, p]
                    tmp_q = a[i, q]
                    a[i, p] = c * tmp_p - s * tmp_q
                    a[i, q] = s * tmp_p + c * tmp_q
                a[p, q] = 0.0
                a[q, p] = 0.0
                for i in range(n):
                    tmp_p = v[i, p]
                    tmp_q = v[i, q]
                    v[i, p] = c * tmp_p - s * tmp_q
                    v[i, q] = s * tmp_p + c * tmp_q

    off = 0.0
    for p in range(n - 1):
        for q in range(p + 1, n):
            off += 2.0 * a[p, q] * a[p, q]
    off = sqrt(off)
    if off <= threshold:
        return np.diag(a_arr).copy(), v_arr
    raise JacobiConvergenceError(
        f"Jacobi did not converge in {max_sweeps} sweeps (off-diagonal {off:.3e}, "
        f"threshold {threshold:.3e})"
    )


def sep_conv2d_valid(img_in, kernel_in):
    """Valid-mode separable 2-D correlation: rows then columns with `kernel`."""
    img_arr = np.ascontiguousarray(img_in, dtype=np.float64)
    k_arr = np.ascontiguousarray(kernel_in, dtype=np.float64)
    cdef double[:, ::1] img = img_arr
    cdef double[::1] k = k_arr
    cdef Py_ssize_t h = img.shape[0], w = img.shape[1], m = k.shape[0]
    if h < m or w < m:
        raise ValueError(f"image {(h, w)} smaller than kernel length {m}")
    cdef Py_ssize_t oh = h - m + 1, ow = w - m + 1
    rows_arr = np.empty((h, ow))
    out_arr = np.empty((oh, ow))
    cdef double[:, ::1] rows = rows_arr
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, u
    cdef double acc
    for i in range(h):
        for j in range(ow):
            acc = 0.0
            for u in range(m):
                acc += img[i, j + u] * k[u]
            rows[i, j] = acc
    for i in range(oh):
        for j in range(ow):
            acc = 0.0
            for u in range(m):
                acc += rows[i + u, j] * k[u]
            out[i, j] = acc
    return out_arr
