"""Paired satellite/street corpora: manifests, splits, toy synthesis.

A corpus is a `manifest.json` next to its images:

    {
      "methods": ["pix2pix", ...],
      "split": "test",                      # optional, defaults to "test"
      "pairs": [
        {"id": "p1", "satellite": "rel.png", "street": "rel.png",
         "label": "mild", "generated": {"pix2pix": "rel.png"}}
      ]
    }

Image paths are relative to the manifest's directory. Pair order in the
file is the canonical iteration order everywhere downstream.
"""

from __future__ import annotations

import enum
import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ManifestError, SplitError

REC601_WEIGHTS = (0.299, 0.587, 0.114)

TOY_METHODS = ["pix2pix", "controlnet", "controlnet-vlm", "moe"]

# Mean-intensity bands the toy satellite images are generated into, used by
# the offline judge stub to recover the severity token deterministically.
TOY_SAT_MEAN_BANDS = {"mild": (0.70, 0.80), "moderate": (0.45, 0.55), "severe": (0.20, 0.30)}


class SeverityLabel(enum.IntEnum):
    MILD = 0
    MODERATE = 1
    SEVERE = 2

    @classmethod
    def from_name(cls, name: str) -> "SeverityLabel":
        try:
            return _LABEL_BY_NAME[name.lower()]
        except KeyError:
            raise ManifestError(f"unknown severity label {name!r} (expected mild/moderate/severe)")

    @property
    def label_name(self) -> str:
        return self.name.lower()


_LABEL_BY_NAME = {"mild": SeverityLabel.MILD, "moderate": SeverityLabel.MODERATE, "severe": SeverityLabel.SEVERE}


class Split(enum.Enum):
    TRAIN = "train"
    TEST = "test"


@dataclass(frozen=True)
class ImagePlane:
    """H×W×C intensities in [0, 1]; channels is 1 or 3."""

    data: np.ndarray

    def __post_init__(self):
        d = self.data
        if d.ndim == 2:
            d = d[:, :, None]
            object.__setattr__(self, "data", d)
        if d.ndim != 3 or d.shape[2] not in (1, 3):
            raise ValueError(f"expected H×W×C with C in (1, 3), got shape {d.shape}")
        if not np.isfinite(d).all():
            raise ValueError("image contains non-finite intensities")
        if d.min() < 0.0 or d.max() > 1.0:
            raise ValueError("intensities outside [0, 1]")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def gray(self) -> np.ndarray:
        """2-D luminance plane; Rec.601 weights for RGB input."""
        if self.channels == 1:
            return self.data[:, :, 0]
        r, g, b = REC601_WEIGHTS
        return r * self.data[:, :, 0] + g * self.data[:, :, 1] + b * self.data[:, :, 2]


@dataclass(frozen=True)
class SamplePair:
    id: str
    satellite_path: Path
    street_path: Path
    label: SeverityLabel
    generated: dict[str, Path] = field(default_factory=dict)


@dataclass(frozen=True)
class Manifest:
    pairs: tuple[SamplePair, ...]
    methods: tuple[str, ...]
    split: Split = Split.TEST
    root: Path = Path(".")

    def __post_init__(self):
        seen = set()
        for pair in self.pairs:
            if pair.id in seen:
                raise ManifestError(f"duplicate pair id {pair.id!r}")
            seen.add(pair.id)
            for method in pair.generated:
                if method not in self.methods:
                    raise ManifestError(
                        f"pair {pair.id!r} references method {method!r} missing from methods list"
                    )

    def __len__(self) -> int:
        return len(self.pairs)

    def class_counts(self) -> dict[SeverityLabel, int]:
        counts = {label: 0 for label in SeverityLabel}
        for pair in self.pairs:
            counts[pair.label] += 1
        return counts


def load_image(path: Path | str) -> ImagePlane:
    """Decode a PNG/JPEG to intensities in [0, 1] (8-bit values / 255)."""
    with Image.open(path) as img:
        if img.mode not in ("L", "RGB"):
            img = img.convert("RGB" if img.mode not in ("1", "I", "F", "LA") else "L")
        arr = np.asarray(img, dtype=np.float64) / 255.0
    return ImagePlane(arr)


def load_manifest(path: Path | str) -> Manifest:
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ManifestError("manifest root must be an object")
    for key in ("methods", "pairs"):
        if key not in raw:
            raise ManifestError(f"manifest missing required field {key!r}")
    methods = raw["methods"]
    if not isinstance(methods, list) or not all(isinstance(m, str) for m in methods):
        raise ManifestError("field 'methods' must be a list of strings")
    for m in methods:
        if not m or "/" in m or os.sep in m:
            raise ManifestError(f"method name {m!r} is empty or contains a path separator")
    split = Split(raw.get("split", "test"))
    root = path.parent
    pairs = []
    for entry in raw["pairs"]:
        if not isinstance(entry, dict):
            raise ManifestError("each pair must be an object")
        pid = entry.get("id")
        if not isinstance(pid, str) or not pid:
            raise ManifestError("pair missing string field 'id'")
        for key in ("satellite", "street", "label"):
            if key not in entry:
                raise ManifestError(f"pair {pid!r} missing field {key!r}")
        generated = entry.get("generated", {})
        if not isinstance(generated, dict):
            raise ManifestError(f"pair {pid!r}: 'generated' must be an object")
        pair = SamplePair(
            id=pid,
            satellite_path=root / entry["satellite"],
            street_path=root / entry["street"],
            label=SeverityLabel.from_name(entry["label"]),
            generated={m: root / p for m, p in generated.items()},
        )
        for label, p in _pair_paths(pair):
            if not p.is_file():
                raise ManifestError(f"pair {pid!r}: {label} image path does not exist: {p}")
        pairs.append(pair)
    return Manifest(pairs=tuple(pairs), methods=tuple(methods), split=split, root=root)


def _pair_paths(pair: SamplePair):
    yield "satellite", pair.satellite_path
    yield "street", pair.street_path
    for method, p in pair.generated.items():
        yield f"generated[{method}]", p


def save_manifest(manifest: Manifest, path: Path | str) -> None:
    """Write a manifest with image paths relative to the target directory."""
    path = Path(path)
    root = path.parent

    def rel(p: Path) -> str:
        return os.path.relpath(p, root)

    doc = {
        "methods": list(manifest.methods),
        "split": manifest.split.value,
        "pairs": [
            {
                "id": pair.id,
                "satellite": rel(pair.satellite_path),
                "street": rel(pair.street_path),
                "label": pair.label.label_name,
                "generated": {m: rel(p) for m, p in pair.generated.items()},
            }
            for pair in manifest.pairs
        ],
    }
    path.write_text(json.dumps(doc, indent=2) + "\n")


def stratified_split(manifest: Manifest, per_class: int, seed: int) -> tuple[Manifest, Manifest]:
    """Seeded balanced test/train partition: (test, train).

    Per class: shuffle the pair indices with PCG64(seed) and take the first
    `per_class`. Selected pairs keep their manifest-relative order.
    """
    if per_class < 0:
        raise SplitError("per_class must be >= 0")
    by_class: dict[SeverityLabel, list[int]] = {label: [] for label in SeverityLabel}
    for i, pair in enumerate(manifest.pairs):
        by_class[pair.label].append(i)
    for label, members in by_class.items():
        if len(members) < per_class:
            raise SplitError(
                f"class {label.label_name!r} has {len(members)} pairs, fewer than per_class={per_class}"
            )
    rng = np.random.Generator(np.random.PCG64(seed))
    test_indices: set[int] = set()
    for label in SeverityLabel:
        members = np.array(by_class[label], dtype=np.int64)
        rng.shuffle(members)
        test_indices.update(int(i) for i in members[:per_class])
    test_pairs = tuple(p for i, p in enumerate(manifest.pairs) if i in test_indices)
    train_pairs = tuple(p for i, p in enumerate(manifest.pairs) if i not in test_indices)
    test = replace(manifest, pairs=test_pairs, split=Split.TEST)
    train = replace(manifest, pairs=train_pairs, split=Split.TRAIN)
    return test, train


def synth_toy_corpus(n_per_class: int, size: int, seed: int, out_dir: Path | str) -> Manifest:
    """Write a deterministic procedurally generated corpus under out_dir.

    Severity controls the occlusion/noise level of both views, and the
    satellite mean intensity lands in a per-severity band (see
    TOY_SAT_MEAN_BANDS). Per-method "generated" variants are derived from
    the street view with method-specific corruptions.
    """
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    if size < 8:
        raise ValueError("size must be >= 8")
    out_dir = Path(out_dir)
    try:
        (out_dir / "images").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create toy corpus directory {out_dir}: {exc}") from exc

    rng = np.random.Generator(np.random.PCG64(seed))
    pairs = []
    for label in SeverityLabel:
        lo, hi = TOY_SAT_MEAN_BANDS[label.label_name]
        for k in range(n_per_class):
            pid = f"{label.label_name}-{k:03d}"
            sat = _toy_satellite(rng, size, (lo + hi) / 2.0, label)
            street = _toy_street(rng, size, label)
            generated = {}
            for method in TOY_METHODS:
                generated[method] = _toy_generated(rng, street, method)
            paths = {}
            for name, arr in [("satellite", sat), ("street", street)] + [
                (f"gen_{m}", g) for m, g in generated.items()
            ]:
                rel = Path("images") / f"{pid}_{name}.png"
                _write_png(out_dir / rel, arr)
                paths[name] = out_dir / rel
            pairs.append(
                SamplePair(
                    id=pid,
                    satellite_path=paths["satellite"],
                    street_path=paths["street"],
                    label=label,
                    generated={m: paths[f"gen_{m}"] for m in TOY_METHODS},
                )
            )
    manifest = Manifest(pairs=tuple(pairs), methods=tuple(TOY_METHODS), split=Split.TEST, root=out_dir)
    save_manifest(manifest, out_dir / "manifest.json")
    return manifest


def _smooth_field(rng: np.random.Generator, size: int) -> np.ndarray:
    coarse = rng.random((4, 4))
    reps = -(-size // 4)
    field_ = np.kron(coarse, np.ones((reps, reps)))[:size, :size]
    # cheap blur to remove block edges
    padded = np.pad(field_, 1, mode="edge")
    return (
        padded[:-2, 1:-1] + padded[2:, 1:-1] + padded[1:-1, :-2] + padded[1:-1, 2:] + 4 * field_
    ) / 8.0


def _toy_satellite(rng, size, target_mean, label) -> np.ndarray:
    base = _smooth_field(rng, size)
    noise_level = 0.02 + 0.05 * int(label)
    img = base * 0.25 + rng.normal(0.0, noise_level, (size, size)) * 0.5
    n_blobs = int(label) * 2
    for _ in range(n_blobs):
        cy, cx = rng.integers(0, size, 2)
        r = max(1, size // 8)
        yy, xx = np.ogrid[:size, :size]
        img[(yy - cy) ** 2 + (xx - cx) ** 2 <= r * r] -= 0.3
    img = img - img.mean() + target_mean
    rgb = np.stack([img, img * 0.95 + 0.02, img * 0.9 + 0.03], axis=2)
    return np.clip(rgb, 0.0, 1.0)


def _toy_street(rng, size, label) -> np.ndarray:
    # horizon + facade stripes; severity adds clutter and lowers contrast
    yy = np.linspace(0.0, 1.0, size)[:, None]
    xx = np.linspace(0.0, 1.0, size)[None, :]
    img = 0.65 - 0.3 * yy + 0.1 * np.sin(2 * np.pi * xx * (3 + int(label)))
    img = img + rng.normal(0.0, 0.03 + 0.06 * int(label), (size, size))
    n_debris = int(label) * 3
    for _ in range(n_debris):
        cy = int(rng.integers(size // 2, size))
        cx = int(rng.integers(0, size))
        r = max(1, size // 10)
        ys, ye = max(0, cy - r), min(size, cy + r)
        xs, xe = max(0, cx - r), min(size, cx + r)
        img[ys:ye, xs:xe] = img[ys:ye, xs:xe] * 0.4
    rgb = np.stack([img, img * 0.97, img * 0.92 + 0.02], axis=2)
    return np.clip(rgb, 0.0, 1.0)


def _toy_generated(rng, street: np.ndarray, method: str) -> np.ndarray:
    if method == "pix2pix":
        # heavy blur: mimics the low-frequency collapse of the GAN baseline
        out = street.copy()
        for _ in range(4):
            padded = np.pad(out, ((1, 1), (1, 1), (0, 0)), mode="edge")
            out = (padded[:-2, 1:-1] + padded[2:, 1:-1] + padded[1:-1, :-2] + padded[1:-1, 2:]) / 4.0
        return np.clip(out, 0.0, 1.0)
    if method == "controlnet":
        return np.clip(street + rng.normal(0.0, 0.05, street.shape), 0.0, 1.0)
    if method == "controlnet-vlm":
        return np.clip(street * 0.9 + 0.05 + rng.normal(0.0, 0.08, street.shape), 0.0, 1.0)
    if method == "moe":
        out = street.copy()
        out[::2, :, :] = np.clip(out[::2, :, :] * 1.1, 0.0, 1.0)
        return np.clip(out + rng.normal(0.0, 0.1, street.shape), 0.0, 1.0)
    raise ValueError(f"unknown toy method {method!r}")


def _write_png(path: Path, arr: np.ndarray) -> None:
    data = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(data).save(path, format="PNG")
