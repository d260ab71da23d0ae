"""Classification Accuracy Score: severity head training and scoring.

A linear softmax head over externally extracted features stands in for the
fine-tuned backbone classifier; training uses a from-scratch bias-corrected
Adam (lr 1e-4, batch 32, 10 epochs by default) over seeded shuffled
mini-batches, so identical seeds give bitwise-identical parameters. An
ingestion path for externally produced predicted-label CSVs covers the
full-fine-tune protocol.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import SeverityLabel
from .errors import LabelFileError, ShapeMismatchError
from .fidstats import FeatureSet

N_CLASSES = 3
HEAD_MAGIC = b"CVH1"

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

DEFAULT_EPOCHS = 10
DEFAULT_BATCH = 32
DEFAULT_LR = 1e-4


@dataclass
class AdamState:
    lr: float
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def init(cls, params: dict[str, np.ndarray], lr: float, **kwargs) -> "AdamState":
        state = cls(lr=lr, **kwargs)
        state.m = {k: np.zeros_like(p) for k, p in params.items()}
        state.v = {k: np.zeros_like(p) for k, p in params.items()}
        return state


def adam_step(
    params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update. Returns fresh params and state."""
    if set(params) != set(grads):
        raise ShapeMismatchError(f"param keys {sorted(params)} vs grad keys {sorted(grads)}")
    t = state.step + 1
    new_params: dict[str, np.ndarray] = {}
    new_m: dict[str, np.ndarray] = {}
    new_v: dict[str, np.ndarray] = {}
    for key, p in params.items():
        g = grads[key]
        if g.shape != p.shape:
            raise ShapeMismatchError(f"{key}: grad {g.shape} vs param {p.shape}")
        if not np.isfinite(g).all():
            raise ValueError(f"{key}: non-finite gradient")
        m = state.beta1 * state.m[key] + (1.0 - state.beta1) * g
        v = state.beta2 * state.v[key] + (1.0 - state.beta2) * g * g
        m_hat = m / (1.0 - state.beta1**t)
        v_hat = v / (1.0 - state.beta2**t)
        new_params[key] = p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        new_m[key] = m
        new_v[key] = v
    next_state = AdamState(
        lr=state.lr, beta1=state.beta1, beta2=state.beta2, eps=state.eps, step=t, m=new_m, v=new_v
    )
    return new_params, next_state


@dataclass(frozen=True)
class LinearSoftmaxHead:
    weights: np.ndarray  # 3 x d
    bias: np.ndarray  # 3

    def __post_init__(self):
        if self.weights.ndim != 2 or self.weights.shape[0] != N_CLASSES:
            raise ValueError(f"weights must be {N_CLASSES} x d, got {self.weights.shape}")
        if self.bias.shape != (N_CLASSES,):
            raise ValueError(f"bias must have length {N_CLASSES}, got {self.bias.shape}")
        if not (np.isfinite(self.weights).all() and np.isfinite(self.bias).all()):
            raise ValueError("non-finite head parameters")

    @property
    def d(self) -> int:
        return self.weights.shape[1]

    def predict_proba(self, features: np.ndarray) -> np.ndarray:
        features = np.asarray(features, dtype=np.float64)
        if features.ndim == 1:
            features = features[None, :]
        if features.shape[1] != self.d:
            raise ShapeMismatchError(f"features dim {features.shape[1]} vs head dim {self.d}")
        logits = features @ self.weights.T + self.bias
        logits -= logits.max(axis=1, keepdims=True)
        e = np.exp(logits)
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, features: np.ndarray) -> np.ndarray:
        """Argmax class indices (ties break to the lowest index)."""
        return np.argmax(self.predict_proba(features), axis=1)


def mean_cross_entropy(head: LinearSoftmaxHead, rows: np.ndarray, labels: np.ndarray) -> float:
    probs = head.predict_proba(rows)
    picked = probs[np.arange(len(labels)), labels]
    return float(-np.mean(np.log(np.maximum(picked, 1e-300))))


def train_head_with_history(
    features: FeatureSet,
    labels: list[SeverityLabel] | np.ndarray,
    epochs: int = DEFAULT_EPOCHS,
    batch: int = DEFAULT_BATCH,
    lr: float = DEFAULT_LR,
    seed: int = 0,
) -> tuple[LinearSoftmaxHead, list[float]]:
    """Train and also return the end-of-epoch training cross-entropy curve."""
    y = np.asarray([int(label) for label in labels], dtype=np.int64)
    if len(y) != features.n:
        raise ShapeMismatchError(f"{len(y)} labels vs {features.n} feature rows")
    present = set(y.tolist())
    for label in SeverityLabel:
        if int(label) not in present:
            raise ValueError(f"class {label.label_name!r} absent from training labels")
    rows = np.asarray(features.rows, dtype=np.float64)
    params = {"w": np.zeros((N_CLASSES, features.d)), "b": np.zeros(N_CLASSES)}
    state = AdamState.init(params, lr=lr)
    rng = np.random.Generator(np.random.PCG64(seed))
    history: list[float] = []
    for _ in range(epochs):
        order = rng.permutation(features.n)
        for start in range(0, features.n, batch):
            idx = order[start : start + batch]
            x = rows[idx]
            logits = x @ params["w"].T + params["b"]
            logits -= logits.max(axis=1, keepdims=True)
            e = np.exp(logits)
            probs = e / e.sum(axis=1, keepdims=True)
            onehot = np.zeros_like(probs)
            onehot[np.arange(len(idx)), y[idx]] = 1.0
            g_logits = (probs - onehot) / len(idx)
            grads = {"w": g_logits.T @ x, "b": g_logits.sum(axis=0)}
            params, state = adam_step(params, grads, state)
        head = LinearSoftmaxHead(weights=params["w"], bias=params["b"])
        history.append(mean_cross_entropy(head, rows, y))
    return LinearSoftmaxHead(weights=params["w"], bias=params["b"]), history


def train_head(
    features: FeatureSet,
    labels: list[SeverityLabel] | np.ndarray,
    epochs: int = DEFAULT_EPOCHS,
    batch: int = DEFAULT_BATCH,
    lr: float = DEFAULT_LR,
    seed: int = 0,
) -> LinearSoftmaxHead:
    head, _ = train_head_with_history(features, labels, epochs=epochs, batch=batch, lr=lr, seed=seed)
    return head


@dataclass(frozen=True)
class ConfusionMatrix:
    """3x3 counts; rows are true labels, columns are predictions."""

    counts: np.ndarray

    def __post_init__(self):
        if self.counts.shape != (N_CLASSES, N_CLASSES):
            raise ValueError(f"expected {N_CLASSES}x{N_CLASSES}, got {self.counts.shape}")
        if (self.counts < 0).any():
            raise ValueError("negative confusion counts")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def row_normalized(self) -> np.ndarray:
        sums = self.counts.sum(axis=1, keepdims=True).astype(np.float64)
        out = np.zeros_like(self.counts, dtype=np.float64)
        np.divide(self.counts, sums, out=out, where=sums > 0)
        return out


@dataclass(frozen=True)
class CasReport:
    accuracy: float
    macro_f1: float
    per_class_recall: tuple[float, float, float]
    per_class_f1: tuple[float, float, float]
    matrix: ConfusionMatrix


def confusion_matrix(y_true, y_pred) -> ConfusionMatrix:
    yt = np.asarray([int(v) for v in y_true], dtype=np.int64)
    yp = np.asarray([int(v) for v in y_pred], dtype=np.int64)
    if yt.shape != yp.shape:
        raise ShapeMismatchError(f"{yt.shape} true labels vs {yp.shape} predictions")
    counts = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    for t, p in zip(yt, yp):
        counts[t, p] += 1
    return ConfusionMatrix(counts=counts)


def report_from_confusion(matrix: ConfusionMatrix) -> CasReport:
    counts = matrix.counts.astype(np.float64)
    total = counts.sum()
    if total == 0:
        raise ValueError("empty confusion matrix")
    accuracy = float(np.trace(counts) / total)
    recalls = []
    f1s = []
    for c in range(N_CLASSES):
        tp = counts[c, c]
        fn = counts[c, :].sum() - tp
        fp = counts[:, c].sum() - tp
        recall = tp / (tp + fn) if tp + fn > 0 else 0.0
        precision = tp / (tp + fp) if tp + fp > 0 else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        recalls.append(float(recall))
        f1s.append(float(f1))
    return CasReport(
        accuracy=accuracy,
        macro_f1=float(np.mean(f1s)),
        per_class_recall=tuple(recalls),
        per_class_f1=tuple(f1s),
        matrix=matrix,
    )


def evaluate_cas(head: LinearSoftmaxHead, gen_features: FeatureSet, labels) -> CasReport:
    y = np.asarray([int(label) for label in labels], dtype=np.int64)
    if len(y) != gen_features.n:
        raise ShapeMismatchError(f"{len(y)} labels vs {gen_features.n} feature rows")
    preds = head.predict(gen_features.rows)
    return report_from_confusion(confusion_matrix(y, preds))


def save_head(head: LinearSoftmaxHead, path: Path | str) -> None:
    """Little-endian binary: magic CVH1, u32 d, f64 weights (3 x d), f64 bias (3)."""
    payload = HEAD_MAGIC + struct.pack("<I", head.d)
    payload += np.ascontiguousarray(head.weights, dtype="<f8").tobytes()
    payload += np.ascontiguousarray(head.bias, dtype="<f8").tobytes()
    Path(path).write_bytes(payload)


def load_head(path: Path | str) -> LinearSoftmaxHead:
    buf = Path(path).read_bytes()
    if buf[:4] != HEAD_MAGIC:
        raise LabelFileError(f"{path}: bad magic (not a CVH1 head file)")
    (d,) = struct.unpack("<I", buf[4:8])
    expected = 8 + 8 * (N_CLASSES * d + N_CLASSES)
    if len(buf) != expected:
        raise LabelFileError(f"{path}: expected {expected} bytes for d={d}, got {len(buf)}")
    flat = np.frombuffer(buf[8:], dtype="<f8")
    weights = flat[: N_CLASSES * d].reshape(N_CLASSES, d).copy()
    bias = flat[N_CLASSES * d :].copy()
    return LinearSoftmaxHead(weights=weights, bias=bias)


def read_pred_labels(path: Path | str) -> dict[str, dict[str, SeverityLabel]]:
    """Parse a pair_id,method,predicted_label CSV into method -> pair_id -> label."""
    path = Path(path)
    out: dict[str, dict[str, SeverityLabel]] = {}
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"pair_id", "method", "predicted_label"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise LabelFileError(f"{path}: header must contain {sorted(required)}, got {reader.fieldnames}")
        for lineno, row in enumerate(reader, start=2):
            try:
                label = SeverityLabel.from_name(row["predicted_label"])
            except Exception as exc:
                raise LabelFileError(f"{path}:{lineno}: {exc}") from exc
            method = row["method"]
            pair_id = row["pair_id"]
            if not pair_id or not method:
                raise LabelFileError(f"{path}:{lineno}: empty pair_id or method")
            bucket = out.setdefault(method, {})
            if pair_id in bucket:
                raise LabelFileError(f"{path}:{lineno}: duplicate prediction for ({pair_id}, {method})")
            bucket[pair_id] = label
    if not out:
        raise LabelFileError(f"{path}: no prediction rows")
    return out
