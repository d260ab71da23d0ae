"""Frechet distance between Gaussian fits of feature sets (FID).

The matrix square root is built from scratch on the cyclic-Jacobi
eigensolver in crossview_eval.kernels (compiled when available) with
eigenvalue clamping; the trace term uses the symmetrized product
S1 @ Sigma2 @ S1 with S1 = sqrtm(Sigma1), which has the same trace as the
textbook Sigma1 @ Sigma2 form but stays symmetric PSD, so no complex
arithmetic appears.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError, ShapeMismatchError
from .kernels import jacobi_eigh

SYMMETRY_TOL = 1e-8
EIGENVALUE_FLOOR = -1e-8
NEGATIVE_TOTAL_TOL = -1e-6


@dataclass(frozen=True)
class FeatureSet:
    rows: np.ndarray  # n x d

    def __post_init__(self):
        if self.rows.ndim != 2:
            raise ValueError(f"expected an n x d matrix, got shape {self.rows.shape}")
        if self.rows.shape[0] < 2:
            raise ValueError(f"need at least 2 rows, got {self.rows.shape[0]}")
        if not np.isfinite(self.rows).all():
            raise ValueError("feature rows contain non-finite entries")

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def d(self) -> int:
        return self.rows.shape[1]


@dataclass(frozen=True)
class GaussianMoments:
    mu: np.ndarray
    sigma: np.ndarray

    @property
    def d(self) -> int:
        return self.mu.shape[0]


def fit_moments(fs: FeatureSet) -> GaussianMoments:
    """Column means and the unbiased (n-1) sample covariance, symmetrized."""
    rows = np.asarray(fs.rows, dtype=np.float64)
    mu = rows.mean(axis=0)
    centered = rows - mu
    sigma = centered.T @ centered / (fs.n - 1)
    sigma = (sigma + sigma.T) / 2.0
    return GaussianMoments(mu=mu, sigma=sigma)


def sqrtm_psd(a: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition with clamping.

    Eigenvalues slightly negative from roundoff (>= -1e-8 relative to the
    spectral radius) are clamped to zero; anything more negative is an
    error. Requires symmetry within 1e-8 of the largest entry.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeMismatchError(f"expected a square matrix, got {a.shape}")
    if not np.isfinite(a).all():
        raise NumericalError("matrix contains non-finite entries")
    scale = max(1.0, float(np.abs(a).max()))
    asym = float(np.abs(a - a.T).max())
    if asym > SYMMETRY_TOL * scale:
        raise NumericalError(f"matrix not symmetric: max |a - a^T| = {asym:.3e} (scale {scale:.3e})")
    sym = (a + a.T) / 2.0
    eigvals, eigvecs = jacobi_eigh(sym)
    floor = EIGENVALUE_FLOOR * max(1.0, float(np.abs(eigvals).max()))
    if (eigvals < floor).any():
        raise NumericalError(
            f"matrix is indefinite: min eigenvalue {eigvals.min():.3e} below tolerance {floor:.3e}"
        )
    clamped = np.clip(eigvals, 0.0, None)
    root = (eigvecs * np.sqrt(clamped)) @ eigvecs.T
    return (root + root.T) / 2.0


def frechet_distance(g1: GaussianMoments, g2: GaussianMoments) -> float:
    """||mu1 - mu2||^2 + Tr(S1 + S2 - 2 sqrt(S1^1/2 S2 S1^1/2))."""
    if g1.d != g2.d:
        raise ShapeMismatchError(f"dimension mismatch: {g1.d} vs {g2.d}")
    diff = g1.mu - g2.mu
    s1_root = sqrtm_psd(g1.sigma)
    inner = s1_root @ g2.sigma @ s1_root
    cross = sqrtm_psd((inner + inner.T) / 2.0)
    total = float(diff @ diff + np.trace(g1.sigma) + np.trace(g2.sigma) - 2.0 * np.trace(cross))
    if total < NEGATIVE_TOTAL_TOL:
        raise NumericalError(f"Frechet distance {total:.3e} below the numerical-noise tolerance")
    return max(total, 0.0)


def fid(real: FeatureSet, gen: FeatureSet) -> float:
    if real.d != gen.d:
        raise ShapeMismatchError(f"feature dimensions differ: {real.d} vs {gen.d}")
    return frechet_distance(fit_moments(real), fit_moments(gen))
