"""Per-pair pixel metrics: SSIM, PSNR, and LPIPS over supplied features.

SSIM uses the canonical 11x11 Gaussian window (sigma 1.5) with
C1=(0.01*L)^2, C2=(0.03*L)^2 and L=1 (images are [0,1]); color inputs are
reduced to the Rec.601 luminance plane by the caller or via `ssim`'s
ImagePlane path. PSNR is computed over all channels with MSE=0 mapping to
the infinite sentinel (serialized as "inf" in reports). LPIPS consumes
externally extracted layered feature maps with their per-channel weights;
no pretrained network runs here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataset import ImagePlane
from .errors import ShapeMismatchError
from .kernels import sep_conv2d_valid

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = (0.01 * 1.0) ** 2
SSIM_C2 = (0.03 * 1.0) ** 2
LPIPS_NORM_EPS = 1e-10


@dataclass(frozen=True)
class FeatureLayer:
    """One named feature map (c, h, w) with a per-channel weight vector."""

    name: str
    data: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        if self.data.ndim != 3:
            raise ValueError(f"layer {self.name!r}: expected (c, h, w), got {self.data.shape}")
        if self.weights.shape != (self.data.shape[0],):
            raise ValueError(
                f"layer {self.name!r}: weights {self.weights.shape} vs channels {self.data.shape[0]}"
            )
        if (self.weights < 0).any():
            raise ValueError(f"layer {self.name!r}: negative channel weights")
        if not np.isfinite(self.data).all():
            raise ValueError(f"layer {self.name!r}: non-finite feature values")


@dataclass(frozen=True)
class LayeredFeatures:
    layers: tuple[FeatureLayer, ...]

    def __post_init__(self):
        names = [layer.name for layer in self.layers]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate layer names: {names}")


@dataclass(frozen=True)
class PixelMetricRow:
    pair_id: str
    method: str
    ssim: float
    psnr_db: float  # math.inf when MSE == 0
    lpips: float


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """1-D Gaussian taps normalized to sum 1 (the 2-D window is the outer product)."""
    offsets = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(offsets**2) / (2.0 * sigma**2))
    return g / g.sum()


def _to_gray(image) -> np.ndarray:
    if isinstance(image, ImagePlane):
        return image.gray()
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 3:
        return ImagePlane(arr).gray()
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D or H×W×C image, got shape {arr.shape}")
    return arr


def ssim(x, y) -> float:
    """Mean local SSIM over the valid Gaussian-window positions."""
    gx = _to_gray(x)
    gy = _to_gray(y)
    if gx.shape != gy.shape:
        raise ShapeMismatchError(f"{gx.shape} vs {gy.shape}")
    if gx.shape[0] < SSIM_WINDOW or gx.shape[1] < SSIM_WINDOW:
        raise ValueError(f"image {gx.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    k = gaussian_window()
    mu_x = sep_conv2d_valid(gx, k)
    mu_y = sep_conv2d_valid(gy, k)
    var_x = sep_conv2d_valid(gx * gx, k) - mu_x * mu_x
    var_y = sep_conv2d_valid(gy * gy, k) - mu_y * mu_y
    cov_xy = sep_conv2d_valid(gx * gy, k) - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + SSIM_C1) * (2.0 * cov_xy + SSIM_C2)
    den = (mu_x * mu_x + mu_y * mu_y + SSIM_C1) * (var_x + var_y + SSIM_C2)
    return float(np.mean(num / den))


def psnr(x, y) -> float:
    """10*log10(1/MSE) over all channels; math.inf for identical inputs."""
    ax = np.asarray(getattr(x, "data", x), dtype=np.float64)
    ay = np.asarray(getattr(y, "data", y), dtype=np.float64)
    if ax.shape != ay.shape:
        raise ShapeMismatchError(f"{ax.shape} vs {ay.shape}")
    mse = float(np.mean((ax - ay) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def lpips(fx: LayeredFeatures, fy: LayeredFeatures) -> float:
    """Weighted squared distance between unit-normalized feature activations.

    Per layer: channel vectors are unit-normalized at each spatial site
    (epsilon-stabilized), squared differences are weighted per channel and
    averaged spatially; layer results are summed.
    """
    if len(fx.layers) != len(fy.layers):
        raise ShapeMismatchError(f"{len(fx.layers)} layers vs {len(fy.layers)}")
    total = 0.0
    for lx, ly in zip(fx.layers, fy.layers):
        if lx.name != ly.name:
            raise ShapeMismatchError(f"layer name mismatch: {lx.name!r} vs {ly.name!r}")
        if lx.data.shape != ly.data.shape:
            raise ShapeMismatchError(f"layer {lx.name!r}: {lx.data.shape} vs {ly.data.shape}")
        if not np.array_equal(lx.weights, ly.weights):
            raise ShapeMismatchError(f"layer {lx.name!r}: channel weights differ")
        nx = _unit_normalize(lx.data)
        ny = _unit_normalize(ly.data)
        sq = (nx - ny) ** 2
        weighted = np.tensordot(lx.weights, sq, axes=(0, 0))  # (h, w)
        total += float(weighted.mean())
    return total


def _unit_normalize(data: np.ndarray) -> np.ndarray:
    norm = np.sqrt(np.sum(data * data, axis=0, keepdims=True))
    return data / (norm + LPIPS_NORM_EPS)


def format_psnr(value: float) -> str:
    return "inf" if math.isinf(value) else f"{value:.3f}"
