"""Reader/writer for the CVF1 binary feature-file format.

Little-endian layout:

    magic        4 bytes  b"CVF1"
    flags        u32      reserved, must be 0
    layer_count  u32
    per layer:
      name_len   u16
      name       utf-8 bytes (unique within the file)
      ndim       u8       1 or 3
      dims       ndim x u32   (d,) or (c, h, w)
      has_w      u8       0 or 1
      data       prod(dims) x f32
      weights    dims[0] x f32   present iff has_w == 1

A 1-D layer is a pooled feature vector (FID/CAS). A 3-D layer is a spatial
feature map whose optional weight block carries the per-channel weights
used by LPIPS. A "feature-set file" is a CVF file whose 1-D layers are the
rows of an n x d matrix, in layer order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FeatureFileError
from .pixelmetrics import FeatureLayer, LayeredFeatures

MAGIC = b"CVF1"
POOL_LAYER = "pool"


@dataclass(frozen=True)
class CvfLayer:
    name: str
    data: np.ndarray  # float32, 1-D or 3-D
    weights: np.ndarray | None = None  # float32, length = data.shape[0]


def write_feature_file(path: Path | str, layers: list[CvfLayer]) -> None:
    names = [layer.name for layer in layers]
    if len(set(names)) != len(names):
        raise FeatureFileError(f"duplicate layer names: {names}")
    chunks = [MAGIC, struct.pack("<II", 0, len(layers))]
    for layer in layers:
        data = np.ascontiguousarray(layer.data, dtype="<f4")
        if data.ndim not in (1, 3):
            raise FeatureFileError(f"layer {layer.name!r}: ndim must be 1 or 3, got {data.ndim}")
        name_bytes = layer.name.encode("utf-8")
        chunks.append(struct.pack("<H", len(name_bytes)))
        chunks.append(name_bytes)
        chunks.append(struct.pack("<B", data.ndim))
        chunks.append(struct.pack(f"<{data.ndim}I", *data.shape))
        if layer.weights is not None:
            weights = np.ascontiguousarray(layer.weights, dtype="<f4")
            if weights.shape != (data.shape[0],):
                raise FeatureFileError(
                    f"layer {layer.name!r}: weights {weights.shape} vs leading dim {data.shape[0]}"
                )
            chunks.append(struct.pack("<B", 1))
            chunks.append(data.tobytes())
            chunks.append(weights.tobytes())
        else:
            chunks.append(struct.pack("<B", 0))
            chunks.append(data.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def read_feature_file(path: Path | str) -> list[CvfLayer]:
    path = Path(path)
    buf = path.read_bytes()
    view = memoryview(buf)
    offset = 0

    def take(n: int) -> memoryview:
        nonlocal offset
        if offset + n > len(buf):
            raise FeatureFileError(f"{path}: truncated at byte {offset} (needed {n} more)")
        piece = view[offset : offset + n]
        offset += n
        return piece

    if bytes(take(4)) != MAGIC:
        raise FeatureFileError(f"{path}: bad magic (not a CVF1 file)")
    flags, layer_count = struct.unpack("<II", take(8))
    if flags != 0:
        raise FeatureFileError(f"{path}: unsupported flags {flags:#x}")
    layers: list[CvfLayer] = []
    names: set[str] = set()
    for _ in range(layer_count):
        (name_len,) = struct.unpack("<H", take(2))
        name = bytes(take(name_len)).decode("utf-8")
        if name in names:
            raise FeatureFileError(f"{path}: duplicate layer name {name!r}")
        names.add(name)
        (ndim,) = struct.unpack("<B", take(1))
        if ndim not in (1, 3):
            raise FeatureFileError(f"{path}: layer {name!r} has ndim {ndim}, expected 1 or 3")
        dims = struct.unpack(f"<{ndim}I", take(4 * ndim))
        (has_w,) = struct.unpack("<B", take(1))
        if has_w not in (0, 1):
            raise FeatureFileError(f"{path}: layer {name!r} has invalid weight flag {has_w}")
        count = int(np.prod(dims))
        data = np.frombuffer(take(4 * count), dtype="<f4").reshape(dims).copy()
        weights = None
        if has_w:
            weights = np.frombuffer(take(4 * dims[0]), dtype="<f4").copy()
        layers.append(CvfLayer(name=name, data=data, weights=weights))
    if offset != len(buf):
        raise FeatureFileError(f"{path}: {len(buf) - offset} trailing bytes after last layer")
    return layers


def pooled_vector(layers: list[CvfLayer], name: str = POOL_LAYER) -> np.ndarray:
    """The 1-D pooled feature vector carried by an image feature file."""
    for layer in layers:
        if layer.name == name:
            if layer.data.ndim != 1:
                raise FeatureFileError(f"layer {name!r} is not 1-D")
            return np.asarray(layer.data, dtype=np.float64)
    raise FeatureFileError(f"no {name!r} layer present (have {[la.name for la in layers]})")


def layered_features(layers: list[CvfLayer]) -> LayeredFeatures:
    """All 3-D layers as LPIPS input; absent weight blocks default to ones."""
    out = []
    for layer in layers:
        if layer.data.ndim != 3:
            continue
        weights = layer.weights
        if weights is None:
            weights = np.ones(layer.data.shape[0], dtype=np.float64)
        out.append(
            FeatureLayer(
                name=layer.name,
                data=np.asarray(layer.data, dtype=np.float64),
                weights=np.asarray(weights, dtype=np.float64),
            )
        )
    if not out:
        raise FeatureFileError("no 3-D feature layers present")
    return LayeredFeatures(layers=tuple(out))


def read_feature_matrix(path: Path | str) -> np.ndarray:
    """Stack the 1-D layers of a feature-set file into an n x d matrix."""
    rows = [layer for layer in read_feature_file(path) if layer.data.ndim == 1]
    if not rows:
        raise FeatureFileError(f"{path}: no 1-D layers to stack")
    d = rows[0].data.shape[0]
    for layer in rows:
        if layer.data.shape[0] != d:
            raise FeatureFileError(f"{path}: inconsistent row dimensions {layer.data.shape[0]} vs {d}")
    return np.stack([np.asarray(layer.data, dtype=np.float64) for layer in rows])


def write_feature_matrix(path: Path | str, rows: np.ndarray) -> None:
    rows = np.asarray(rows)
    if rows.ndim != 2:
        raise FeatureFileError(f"expected an n x d matrix, got shape {rows.shape}")
    layers = [CvfLayer(name=f"row{i:06d}", data=rows[i].astype("<f4")) for i in range(rows.shape[0])]
    write_feature_file(path, layers)
