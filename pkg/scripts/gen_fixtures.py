#!/usr/bin/env python3
"""Regenerate the committed test fixtures.

Writes, under tests/fixtures/:
  toy/            12-pair deterministic toy corpus (4 per class, 32 px, seed 7)
  toy_features/   per-image CVF feature files from the toy extractor below
  all_mild.csv    predicted-label CSV where every prediction is "mild"

The toy extractor is a stand-in for the real feature extractor: a pooled
4x4 grid-mean vector (d=16) plus two layered gradient/intensity maps with
uniform channel weights. It only needs to be deterministic and
non-degenerate.
"""

from __future__ import annotations

import csv
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from crossview_eval.dataset import ImagePlane, load_image, synth_toy_corpus
from crossview_eval.featfile import CvfLayer, write_feature_file

FIXTURES = Path(__file__).resolve().parents[1] / "tests" / "fixtures"
TOY_SEED = 7
TOY_PER_CLASS = 4
TOY_SIZE = 32


def toy_feature_layers(img: ImagePlane) -> list[CvfLayer]:
    g = img.gray()
    h, w = g.shape
    gh, gw = h // 4, w // 4
    pool = np.array(
        [g[i * gh : (i + 1) * gh, j * gw : (j + 1) * gw].mean() for i in range(4) for j in range(4)],
        dtype=np.float32,
    )
    dx = np.zeros_like(g)
    dx[:, 1:] = np.abs(np.diff(g, axis=1))
    dy = np.zeros_like(g)
    dy[1:, :] = np.abs(np.diff(g, axis=0))
    conv1 = np.stack([g, dx, dy]).astype(np.float32)
    half = g[: h // 2 * 2 : 2, : w // 2 * 2 : 2]
    conv2 = np.stack([half, half**2]).astype(np.float32)
    return [
        CvfLayer("pool", pool),
        CvfLayer("conv1", conv1, np.full(3, 1.0 / 3.0, dtype=np.float32)),
        CvfLayer("conv2", conv2, np.full(2, 0.5, dtype=np.float32)),
    ]


def main() -> None:
    toy_dir = FIXTURES / "toy"
    features_dir = FIXTURES / "toy_features"
    features_dir.mkdir(parents=True, exist_ok=True)
    manifest = synth_toy_corpus(TOY_PER_CLASS, TOY_SIZE, TOY_SEED, toy_dir)
    for pair in manifest.pairs:
        write_feature_file(
            features_dir / f"{pair.id}.street.cvf", toy_feature_layers(load_image(pair.street_path))
        )
        for method, path in pair.generated.items():
            write_feature_file(
                features_dir / f"{pair.id}.{method}.cvf", toy_feature_layers(load_image(path))
            )
    with (FIXTURES / "all_mild.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["pair_id", "method", "predicted_label"])
        for pair in manifest.pairs:
            for method in manifest.methods:
                writer.writerow([pair.id, method, "mild"])
    n_features = len(list(features_dir.glob("*.cvf")))
    print(f"toy corpus: {len(manifest)} pairs in {toy_dir}")
    print(f"feature files: {n_features} in {features_dir}")


if __name__ == "__main__":
    main()
