import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))  # for oracles.py

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def toy_manifest_path() -> Path:
    return FIXTURES / "toy" / "manifest.json"


@pytest.fixture(scope="session")
def toy_features_dir() -> Path:
    return FIXTURES / "toy_features"


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


def make_blobs(seed: int = 3, n_per_class: int = 100, d: int = 8, spread: float = 0.3):
    """Well-separated 3-class Gaussian blobs used by the CAS tests."""
    gen = np.random.default_rng(seed)
    centers = np.zeros((3, d))
    centers[0, 0] = 4.0
    centers[1, 1] = 4.0
    centers[2, 2] = 4.0
    rows, labels = [], []
    for c in range(3):
        rows.append(centers[c] + spread * gen.standard_normal((n_per_class, d)))
        labels.extend([c] * n_per_class)
    return np.vstack(rows), np.array(labels, dtype=np.int64)
