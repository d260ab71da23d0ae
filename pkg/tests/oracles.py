"""Independent reference implementations used only to check the library.

Everything here is written the slow, obvious way (explicit window loops,
perceptron updates) and must stay decoupled from the code under test.
"""

from __future__ import annotations

import math

import numpy as np


def ssim_oracle(x: np.ndarray, y: np.ndarray, window: int = 11, sigma: float = 1.5) -> float:
    """Direct sliding-window SSIM with an explicit 2-D Gaussian window."""
    offsets = np.arange(window) - (window - 1) / 2.0
    g = np.exp(-(offsets**2) / (2.0 * sigma**2))
    g = g / g.sum()
    w2 = np.outer(g, g)
    c1 = (0.01 * 1.0) ** 2
    c2 = (0.03 * 1.0) ** 2
    h, w = x.shape
    values = []
    for i in range(h - window + 1):
        for j in range(w - window + 1):
            px = x[i : i + window, j : j + window]
            py = y[i : i + window, j : j + window]
            mx = float((w2 * px).sum())
            my = float((w2 * py).sum())
            vx = float((w2 * px * px).sum()) - mx * mx
            vy = float((w2 * py * py).sum()) - my * my
            cxy = float((w2 * px * py).sum()) - mx * my
            values.append(
                ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
            )
    return float(np.mean(values))


def conv_valid_oracle(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Naive full 2-D valid correlation with the separable kernel's outer product."""
    w2 = np.outer(kernel, kernel)
    m = kernel.shape[0]
    h, w = img.shape
    out = np.empty((h - m + 1, w - m + 1))
    for i in range(out.shape[0]):
        for j in range(out.shape[1]):
            out[i, j] = float((img[i : i + m, j : j + m] * w2).sum())
    return out


def perceptron_accuracy(rows: np.ndarray, labels: np.ndarray, max_epochs: int = 200) -> float:
    """Training accuracy of a plain multiclass perceptron (separability oracle)."""
    n, d = rows.shape
    k = int(labels.max()) + 1
    w = np.zeros((k, d + 1))
    x = np.hstack([rows, np.ones((n, 1))])
    for _ in range(max_epochs):
        mistakes = 0
        for i in range(n):
            pred = int(np.argmax(w @ x[i]))
            if pred != labels[i]:
                w[labels[i]] += x[i]
                w[pred] -= x[i]
                mistakes += 1
        if mistakes == 0:
            break
    preds = np.argmax(x @ w.T, axis=1)
    return float(np.mean(preds == labels))


def adam_scalar_oracle(theta0: float, lr: float, steps: int) -> float:
    """Directly simulated Adam on f(t) = t^2 (gradient 2t), textbook update."""
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    theta, m, v = theta0, 0.0, 0.0
    for t in range(1, steps + 1):
        g = 2.0 * theta
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        theta -= lr * m_hat / (math.sqrt(v_hat) + eps)
    return theta
