"""Dataset containers and readers for IDX and CSV files."""

from __future__ import annotations

import gzip
import importlib.util
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidInputError
from .linalg import Rng

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray  # m x n, values in [0, 1]
    labels: np.ndarray  # m, int64
    n_classes: int

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        y = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if X.ndim != 2 or X.shape[0] != y.size:
            raise InvalidInputError("features must be m x n with one label per row")
        if X.size and (X.min() < 0 or X.max() > 1 or not np.all(np.isfinite(X))):
            raise InvalidInputError("features must lie in [0, 1]")
        if y.size and (y.min() < 0 or y.max() >= self.n_classes):
            raise InvalidInputError(f"labels must lie in [0, {self.n_classes})")
        for a in (X, y):
            a.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)

    @property
    def m(self) -> int:
        return self.labels.size

    @property
    def n(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.features[idx], self.labels[idx], self.n_classes)


def _open(path, mode: str = "rb"):
    """Open plain or gzip files; gzip is recognised by its magic bytes."""
    path = Path(path)
    if "r" in mode:
        with open(path, "rb") as f:
            gz = f.read(2) == b"\x1f\x8b"
    else:
        gz = path.suffix == ".gz"
    return gzip.open(path, mode) if gz else open(path, mode)


def _read_idx(path, magic: int, what: str) -> tuple[np.ndarray, tuple[int, ...]]:
    with _open(path) as f:
        raw = f.read()
    if len(raw) < 8:
        raise FormatError(f"{path}: {what} file too short for an IDX header", field="header")
    got = struct.unpack(">I", raw[:4])[0]
    if got != magic:
        raise FormatError(f"{path}: {what} magic is 0x{got:08x}, expected 0x{magic:08x}", field="magic")
    ndim = magic & 0xFF
    head = 4 + 4 * ndim
    if len(raw) < head:
        raise FormatError(f"{path}: {what} header truncated", field="header")
    dims = struct.unpack(f">{ndim}I", raw[4:head])
    size = int(np.prod(dims))
    if len(raw) - head < size:
        raise FormatError(f"{path}: {what} data truncated: {len(raw) - head} of {size} bytes", field="data")
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=head).reshape(dims), dims


def load_idx(images_path, labels_path, n_classes: int = 10) -> Dataset:
    """Read an IDX image/label pair; pixels are scaled to [0, 1] by 1/255."""
    images, dims = _read_idx(images_path, IDX_IMAGES_MAGIC, "images")
    labels, (count,) = _read_idx(labels_path, IDX_LABELS_MAGIC, "labels")
    if dims[0] != count:
        raise FormatError(f"{dims[0]} images but {count} labels", field="count")
    if count and labels.max() >= n_classes:
        raise FormatError(f"label {labels.max()} outside [0, {n_classes})", field="labels")
    X = images.reshape(dims[0], -1).astype(float) / 255.0
    return Dataset(X, labels.astype(np.int64), n_classes)


def write_idx(images_path, labels_path, images: np.ndarray, labels) -> None:
    """Write uint8 images (count x rows x cols) and labels as an IDX pair."""
    images = np.asarray(images)
    labels = np.asarray(labels)
    if images.ndim != 3 or images.shape[0] != labels.size:
        raise InvalidInputError("images must be count x rows x cols with one label each")
    with _open(images_path, "wb") as f:
        f.write(struct.pack(">4I", IDX_IMAGES_MAGIC, *images.shape))
        f.write(images.astype(np.uint8).tobytes())
    with _open(labels_path, "wb") as f:
        f.write(struct.pack(">2I", IDX_LABELS_MAGIC, labels.size))
        f.write(labels.astype(np.uint8).tobytes())


def load_csv(path, n_features: int | None = None, scale: float = 1.0, n_classes: int | None = None) -> Dataset:
    """One sample per line, label in the last column, no header.

    Feature values are divided by ``scale``. Without ``n_features`` the width
    of the first row sets it. ``n_classes`` defaults to ``max(label) + 1``.
    """
    rows, labels = [], []
    with _open(path, "rb") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(b",")
            if n_features is None:
                n_features = len(parts) - 1
            if len(parts) != n_features + 1:
                raise FormatError(
                    f"{path}:{lineno}: expected {n_features + 1} fields, got {len(parts)}", field=f"row {lineno}"
                )
            try:
                vals = np.array(parts, dtype=float)
            except ValueError as e:
                raise FormatError(f"{path}:{lineno}: {e}", field=f"row {lineno}") from None
            label = vals[-1]
            if label != int(label) or label < 0:
                raise FormatError(f"{path}:{lineno}: label {label} is not a class index", field=f"row {lineno}")
            rows.append(vals[:-1])
            labels.append(int(label))
    n = n_features or 0
    X = np.array(rows, dtype=float).reshape(len(rows), n) / scale
    y = np.array(labels, dtype=np.int64)
    if n_classes is None:
        n_classes = int(y.max()) + 1 if y.size else 1
    return Dataset(X, y, n_classes)


def write_csv(path, dataset: Dataset, scale: float = 1.0) -> None:
    """Inverse of :func:`load_csv`; values are written with ``repr`` precision."""
    with _open(path, "wb") as f:
        for x, label in zip(dataset.features * scale, dataset.labels):
            f.write((",".join(repr(float(v)) for v in x) + f",{int(label)}\n").encode())


def bundled_mnist_path() -> Path | None:
    """Location of the 5000-sample MNIST CSV shipped inside the mlxtend wheel, if installed."""
    spec = importlib.util.find_spec("mlxtend")
    if spec is None or spec.origin is None:
        return None
    path = Path(os.path.dirname(spec.origin)) / "data" / "data" / "mnist_5k.csv.gz"
    return path if path.exists() else None


def load_bundled_mnist() -> Dataset:
    path = bundled_mnist_path()
    if path is None:
        raise FileNotFoundError("bundled MNIST subset not found; install the 'mnist' extra (mlxtend)")
    return load_csv(path, 784, scale=255.0, n_classes=10)


def train_test_split(data: Dataset, n_test: int, rng: Rng) -> tuple[Dataset, Dataset]:
    """Shuffle with ``rng`` and hold out the last ``n_test`` samples."""
    if not 0 <= n_test <= data.m:
        raise InvalidInputError(f"n_test must lie in [0, {data.m}]")
    perm = rng.generator().permutation(data.m)
    return data.subset(perm[: data.m - n_test]), data.subset(perm[data.m - n_test:])
