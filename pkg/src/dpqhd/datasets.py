"""Dataset loaders: MNIST-style IDX files, ISOLET CSV, synthetic Gaussian blobs.

Nothing is downloaded; paths must point at local files. IDX files may be
gzip-compressed (detected by content, not by name).
"""

import gzip
import os
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DataError, ParseError
from .hdc_core import Dataset
from .tensor_core import derive_seed

IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}
ISOLET_FILES = {"train": "isolet1+2+3+4.data", "test": "isolet5.data"}
ISOLET_FEATURES = 617
ISOLET_CLASSES = 26

KINDS = ("mnist", "fashion-mnist", "isolet", "blobs")


def _read(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] == b"\x1f\x8b":
        data = gzip.decompress(data)
    return data


def _find(directory, name):
    for candidate in (name, name + ".gz"):
        path = os.path.join(directory, candidate)
        if os.path.exists(path):
            return path
    raise DataError(f"missing data file: {os.path.join(directory, name)}[.gz]")


def parse_idx(data, expected_magic, path="<bytes>"):
    """Decode an IDX buffer into a uint8 array of the declared shape."""
    if len(data) < 4:
        raise ParseError(f"{path}: truncated IDX magic at offset 0")
    magic = struct.unpack_from(">I", data, 0)[0]
    if magic != expected_magic:
        raise ParseError(f"{path}: bad IDX magic 0x{magic:08x} at offset 0, "
                         f"expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    head = 4 + 4 * ndim
    if len(data) < head:
        raise ParseError(f"{path}: truncated IDX dimensions at offset 4")
    dims = struct.unpack_from(f">{ndim}I", data, 4)
    count = int(np.prod(dims))
    if len(data) < head + count:
        raise ParseError(f"{path}: truncated IDX payload at offset {len(data)}, "
                         f"need {head + count} bytes")
    if len(data) > head + count:
        raise ParseError(f"{path}: {len(data) - head - count} unexpected trailing bytes "
                         f"at offset {head + count}")
    return np.frombuffer(data, dtype=np.uint8, count=count, offset=head).reshape(dims)


def load_idx_pair(images_path, labels_path, num_classes=10):
    images = parse_idx(_read(images_path), IDX_IMAGES, images_path)
    labels = parse_idx(_read(labels_path), IDX_LABELS, labels_path)
    if images.shape[0] != labels.shape[0]:
        raise ParseError(f"{labels_path}: {labels.shape[0]} labels for "
                         f"{images.shape[0]} images (count at offset 4)")
    X = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return Dataset(X, labels.astype(np.int64), num_classes)


def load_mnist(directory, split):
    """MNIST or Fashion-MNIST split; pixels scaled to [0, 1]."""
    img, lab = MNIST_FILES[split]
    return load_idx_pair(_find(directory, img), _find(directory, lab))


def load_isolet_file(path):
    """ISOLET CSV: 617 comma-separated features, then the label 1..26."""
    rows, labels = [], []
    with open(path, "r") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            fields = [f for f in line.split(",") if f.strip()]
            if len(fields) != ISOLET_FEATURES + 1:
                raise ParseError(f"{path}:{lineno}: expected {ISOLET_FEATURES + 1} fields, "
                                 f"got {len(fields)}")
            try:
                values = [float(f) for f in fields]
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from None
            label = int(round(values[-1]))
            if values[-1] != label or not 1 <= label <= ISOLET_CLASSES:
                raise ParseError(f"{path}:{lineno}: label {fields[-1].strip()} outside 1..26")
            rows.append(values[:-1])
            labels.append(label - 1)
    if not rows:
        raise ParseError(f"{path}:1: no samples")
    return Dataset(np.asarray(rows), np.asarray(labels), ISOLET_CLASSES)


def load_isolet(directory, split):
    return load_isolet_file(_find(directory, ISOLET_FILES[split]))


def make_blobs(num_classes=3, num_features=16, separation=5.0, samples_per_class=100,
               seed=0, split="train"):
    """Isotropic unit-variance Gaussian clusters.

    Class centres are ``separation`` times the standard basis vectors (cycled
    and sign-flipped when there are more classes than features), so any two
    centres are at least ``separation`` apart. Train and test splits use
    independent streams of the same centres.
    """
    if num_classes < 2 or num_features < 1:
        raise DataError("blobs need at least two classes and one feature")
    centres = np.zeros((num_classes, num_features))
    for c in range(num_classes):
        sign = 1.0 if (c // num_features) % 2 == 0 else -1.0
        centres[c, c % num_features] = sign * separation * (1 + c // (2 * num_features))
    rng = np.random.Generator(np.random.Philox(derive_seed(seed, "blobs", split)))
    X = centres.repeat(samples_per_class, axis=0)
    X = X + rng.standard_normal(X.shape)
    y = np.arange(num_classes).repeat(samples_per_class)
    return Dataset(X, y, num_classes)


@dataclass(frozen=True)
class DataSource:
    kind: str
    path: Optional[str] = None
    split: str = "train"
    num_classes: int = 3
    num_features: int = 16
    separation: float = 5.0
    samples_per_class: int = 100
    seed: int = 0


def load(src):
    if src.kind not in KINDS:
        raise DataError(f"unknown dataset kind {src.kind!r}; expected one of {KINDS}")
    if src.split not in ("train", "test"):
        raise DataError(f"unknown split {src.split!r}")
    if src.kind == "blobs":
        return make_blobs(src.num_classes, src.num_features, src.separation,
                          src.samples_per_class, src.seed, src.split)
    if not src.path or not os.path.isdir(src.path):
        raise DataError(f"data directory not found: {src.path}")
    if src.kind in ("mnist", "fashion-mnist"):
        return load_mnist(src.path, src.split)
    return load_isolet(src.path, src.split)
