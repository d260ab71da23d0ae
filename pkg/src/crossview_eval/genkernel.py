"""Desk-scale executable forms of the generative-model equations.

Covers the Pix2Pix training objective, cumulative-coefficient forward
diffusion, deterministic DDIM-style reverse steps driven by a pluggable
noise predictor with spatial/prompt conditioning, and softmax expert
routing with convex aggregation. Everything here is a pure function of its
inputs; predictors must be immutable or internally synchronized.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from .errors import ShapeMismatchError


@dataclass(frozen=True)
class NoiseSchedule:
    """Cumulative signal coefficients alpha_bar[t] for t = 1..T.

    Strictly decreasing within (0, 1]; alpha_bar(0) == 1 is implied, so the
    squared signal/noise coefficients at any step sum to 1 by construction.
    """

    alpha_bar: tuple[float, ...]

    def __post_init__(self):
        ab = self.alpha_bar
        if len(ab) < 1:
            raise ValueError("schedule needs at least one step")
        prev = 1.0
        for t, value in enumerate(ab, start=1):
            if not (0.0 < value <= 1.0):
                raise ValueError(f"alpha_bar[{t}] = {value} outside (0, 1]")
            if t > 1 and value >= prev:
                raise ValueError(f"alpha_bar must be strictly decreasing, violated at t={t}")
            prev = value

    @property
    def steps(self) -> int:
        return len(self.alpha_bar)

    def alpha_bar_at(self, t: int) -> float:
        if not 0 <= t <= self.steps:
            raise ValueError(f"step {t} out of range [0, {self.steps}]")
        return 1.0 if t == 0 else self.alpha_bar[t - 1]

    def signal_coef(self, t: int) -> float:
        return math.sqrt(self.alpha_bar_at(t))

    def noise_coef(self, t: int) -> float:
        return math.sqrt(1.0 - self.alpha_bar_at(t))

    @classmethod
    def linear_beta(cls, steps: int = 50, beta_start: float = 1e-4, beta_end: float = 0.02) -> "NoiseSchedule":
        """Default schedule: cumulative product of (1 - beta) over a linear beta ramp."""
        betas = np.linspace(beta_start, beta_end, steps)
        alpha_bar = np.cumprod(1.0 - betas)
        return cls(alpha_bar=tuple(float(a) for a in alpha_bar))


@dataclass(frozen=True)
class LatentState:
    z: np.ndarray
    t: int

    def __post_init__(self):
        if not np.isfinite(self.z).all():
            raise ValueError("latent tensor contains non-finite entries")
        if self.t < 0:
            raise ValueError("step index must be >= 0")


@dataclass(frozen=True)
class Conditioning:
    """Spatial control features plus an optional prompt embedding."""

    control: np.ndarray
    prompt_embedding: np.ndarray | None = None

    def __post_init__(self):
        if self.control.size == 0:
            raise ValueError("control features must be non-empty")


class NoisePredictor(Protocol):
    def predict(self, z_t: np.ndarray, t: int, cond: Conditioning) -> np.ndarray: ...


@dataclass(frozen=True)
class RoutingWeights:
    w: np.ndarray

    def __post_init__(self):
        if self.w.ndim != 1 or self.w.size < 1:
            raise ValueError("routing weights must be a non-empty vector")
        if (self.w < 0).any():
            raise ValueError("routing weights must be non-negative")
        if abs(float(self.w.sum()) - 1.0) > 1e-9:
            raise ValueError(f"routing weights sum to {self.w.sum()!r}, not 1")

    def __len__(self) -> int:
        return self.w.size


def pix2pix_loss(real, fake, d_fake_score: float, lam: float = 100.0) -> tuple[float, float, float]:
    """Generator objective: non-saturating GAN term plus weighted L1.

    Returns (total, gan_term, l1_term) with gan_term = -ln(d_fake_score)
    and l1_term = mean |real - fake|.
    """
    real = _as_array(real)
    fake = _as_array(fake)
    if real.shape != fake.shape:
        raise ShapeMismatchError(f"real {real.shape} vs fake {fake.shape}")
    if not 0.0 < d_fake_score < 1.0:
        raise ValueError(f"d_fake_score must be in (0, 1), got {d_fake_score}")
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    l1_term = float(np.mean(np.abs(real - fake)))
    gan_term = -math.log(d_fake_score)
    return gan_term + lam * l1_term, gan_term, l1_term


def forward_diffuse(z0: LatentState, t: int, eps: np.ndarray, sched: NoiseSchedule) -> LatentState:
    """z_t = sqrt(alpha_bar_t) * z0 + sqrt(1 - alpha_bar_t) * eps."""
    if not 1 <= t <= sched.steps:
        raise ValueError(f"step {t} out of range [1, {sched.steps}]")
    if eps.shape != z0.z.shape:
        raise ShapeMismatchError(f"eps {eps.shape} vs z0 {z0.z.shape}")
    z_t = sched.signal_coef(t) * z0.z + sched.noise_coef(t) * eps
    return LatentState(z=z_t, t=t)


def denoise_step(
    z_t: LatentState, predictor: NoisePredictor, cond: Conditioning, sched: NoiseSchedule
) -> LatentState:
    """One deterministic reverse step from t to t-1.

    Reconstructs z0_hat from the predicted noise, then re-noises to t-1:
        z0_hat  = (z_t - sqrt(1 - ab_t) * eps_hat) / sqrt(ab_t)
        z_{t-1} = sqrt(ab_{t-1}) * z0_hat + sqrt(1 - ab_{t-1}) * eps_hat
    """
    t = z_t.t
    if not 1 <= t <= sched.steps:
        raise ValueError(f"step {t} out of range [1, {sched.steps}]")
    eps_hat = predictor.predict(z_t.z, t, cond)
    if eps_hat.shape != z_t.z.shape:
        raise ShapeMismatchError(f"predictor output {eps_hat.shape} vs latent {z_t.z.shape}")
    z0_hat = (z_t.z - sched.noise_coef(t) * eps_hat) / sched.signal_coef(t)
    z_prev = sched.signal_coef(t - 1) * z0_hat + sched.noise_coef(t - 1) * eps_hat
    return LatentState(z=z_prev, t=t - 1)


def reverse_loop(z_t: LatentState, predictor: NoisePredictor, cond: Conditioning, sched: NoiseSchedule) -> LatentState:
    """Apply denoise_step until t = 0."""
    state = z_t
    while state.t > 0:
        state = denoise_step(state, predictor, cond, sched)
    return state


def route_weights(features, weights, bias, k: int | None = None) -> RoutingWeights:
    """Softmax over an affine head: w = softmax(W @ features + b)."""
    features = np.asarray(features, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    if weights.ndim != 2 or bias.ndim != 1 or weights.shape[0] != bias.shape[0]:
        raise ShapeMismatchError(f"router parameters disagree: W {weights.shape}, b {bias.shape}")
    if features.ndim != 1 or weights.shape[1] != features.shape[0]:
        raise ShapeMismatchError(f"features {features.shape} vs W {weights.shape}")
    if k is not None and k != bias.shape[0]:
        raise ShapeMismatchError(f"K={k} but router emits {bias.shape[0]} logits")
    logits = weights @ features + bias
    return RoutingWeights(w=softmax(logits))


def softmax(logits) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max()
    e = np.exp(shifted)
    return e / e.sum()


def moe_aggregate(expert_outputs: Sequence[np.ndarray], w: RoutingWeights) -> np.ndarray:
    """Convex combination sum_k w_k * expert_k."""
    if len(expert_outputs) != len(w):
        raise ShapeMismatchError(f"{len(expert_outputs)} expert outputs vs {len(w)} weights")
    shape = np.asarray(expert_outputs[0]).shape
    out = np.zeros(shape, dtype=np.float64)
    for wk, expert in zip(w.w, expert_outputs):
        expert = np.asarray(expert, dtype=np.float64)
        if expert.shape != shape:
            raise ShapeMismatchError(f"expert output {expert.shape} vs {shape}")
        out += wk * expert
    return out


def _as_array(image) -> np.ndarray:
    data = getattr(image, "data", image)
    return np.asarray(data, dtype=np.float64)
