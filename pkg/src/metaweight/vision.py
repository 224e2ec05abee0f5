"""Handwritten-digit data: IDX files, label corruption, and a synthetic stand-in."""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .classifier import CORRECT, INCORRECT, N_CLASSES, N_PIXELS
from .tensor import DTYPE

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}
N_TRAIN = 50_000


class IdxError(ValueError):
    """Base class for malformed IDX input."""


class IdxMagicError(IdxError):
    pass


class IdxTruncatedError(IdxError):
    pass


class IdxCountMismatch(IdxError):
    pass


@dataclass(frozen=True)
class ImageDataset:
    images: np.ndarray  # (n, 784) in [0, 1]
    labels: np.ndarray  # (n,) class ids
    split: str = "train"

    def __post_init__(self):
        if self.images.shape[0] != self.labels.shape[0]:
            raise ValueError("images and labels differ in length")

    def __len__(self) -> int:
        return self.labels.shape[0]

    def subset(self, idx, split: str | None = None) -> "ImageDataset":
        return ImageDataset(self.images[idx], self.labels[idx], split or self.split)


@dataclass(frozen=True)
class CorruptedDataset:
    base: ImageDataset
    shown_labels: np.ndarray
    indicator: np.ndarray  # CORRECT or INCORRECT per example

    def __len__(self) -> int:
        return len(self.base)

    @property
    def correct(self) -> np.ndarray:
        return self.indicator == CORRECT


def _read(path: Path) -> bytes:
    data = Path(path).read_bytes()
    return gzip.decompress(data) if data[:2] == b"\x1f\x8b" else data


def _parse_idx(blob: bytes, magic: int, what: str) -> tuple[tuple[int, ...], np.ndarray]:
    if len(blob) < 4:
        raise IdxTruncatedError(f"{what}: file shorter than its header")
    (got,) = struct.unpack_from(">I", blob, 0)
    if got != magic:
        raise IdxMagicError(f"{what}: magic 0x{got:08x}, expected 0x{magic:08x}")
    ndim = magic & 0xFF
    if len(blob) < 4 + 4 * ndim:
        raise IdxTruncatedError(f"{what}: header truncated")
    dims = struct.unpack_from(f">{ndim}I", blob, 4)
    size = int(np.prod(dims, dtype=np.int64))
    body = blob[4 + 4 * ndim:]
    if len(body) < size:
        raise IdxTruncatedError(f"{what}: expected {size} data bytes, found {len(body)}")
    return dims, np.frombuffer(body, dtype=np.uint8, count=size)


def load_idx(images_path, labels_path, split: str = "train") -> ImageDataset:
    """Read an IDX image/label pair (optionally gzipped); pixels are scaled to [0, 1]."""
    dims, pix = _parse_idx(_read(images_path), IDX_IMAGES_MAGIC, "images")
    (n_lab,), lab = _parse_idx(_read(labels_path), IDX_LABELS_MAGIC, "labels")
    if dims[0] != n_lab:
        raise IdxCountMismatch(f"{dims[0]} images but {n_lab} labels")
    images = pix.reshape(dims[0], -1).astype(DTYPE) / 255.0
    return ImageDataset(images, lab.astype(np.int64), split)


def write_idx(images_path, labels_path, images: np.ndarray, labels: np.ndarray, shape=(28, 28)) -> None:
    """Write uint8 images ``(n, h*w)`` and labels in IDX layout."""
    images = np.asarray(images)
    if images.dtype != np.uint8:
        raise TypeError("IDX images are unsigned bytes")
    n = images.shape[0]
    Path(images_path).write_bytes(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, *shape) + images.tobytes())
    Path(labels_path).write_bytes(struct.pack(">II", IDX_LABELS_MAGIC, n)
                                  + np.asarray(labels, dtype=np.uint8).tobytes())


def _find(directory: Path, stem: str) -> Path:
    for cand in (stem, stem + ".gz", stem.replace("-idx", ".idx"), stem.replace("-idx", ".idx") + ".gz"):
        if (directory / cand).exists():
            return directory / cand
    raise FileNotFoundError(f"{stem} not found in {directory}")


def load_mnist(directory) -> dict[str, ImageDataset]:
    """Official files: first 50,000 training images train, the remaining 10,000 validate."""
    directory = Path(directory)
    full = load_idx(_find(directory, MNIST_FILES["train_images"]), _find(directory, MNIST_FILES["train_labels"]))
    test = load_idx(_find(directory, MNIST_FILES["test_images"]), _find(directory, MNIST_FILES["test_labels"]),
                    "test")
    # smaller (non-official) files keep the same 5:1 proportion
    n_train = N_TRAIN if len(full) >= 60_000 else len(full) * 5 // 6
    return {"train": full.subset(slice(0, n_train), "train"),
            "valid": full.subset(slice(n_train, None), "valid"),
            "test": test}


def corrupt(dataset: ImageDataset, fraction: float, rng: np.random.Generator,
            n_classes: int = N_CLASSES) -> CorruptedDataset:
    """Relabel exactly ``floor(fraction * n)`` examples with a uniformly drawn wrong class."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must lie in [0, 1]")
    n = len(dataset)
    k = int(np.floor(fraction * n))
    chosen = rng.choice(n, size=k, replace=False)
    shown = dataset.labels.copy()
    # an offset in 1..C-1 maps each true label uniformly onto the other classes
    shown[chosen] = (shown[chosen] + rng.integers(1, n_classes, size=k)) % n_classes
    indicator = np.full(n, CORRECT, dtype=np.int64)
    indicator[chosen] = INCORRECT
    return CorruptedDataset(dataset, shown, indicator)


def synth_clusters(n_per_class: int, rng: np.random.Generator, n_classes: int = N_CLASSES,
                   n_features: int = N_PIXELS, noise: float = 0.25, split: str = "train",
                   means: np.ndarray | None = None) -> ImageDataset:
    """Gaussian blobs in pixel space with class-specific means, clipped to [0, 1].

    Pass ``means`` to draw further splits from the same class centres.
    """
    if n_per_class < 1:
        raise ValueError("need at least one example per class")
    if means is None:
        means = class_means(rng, n_classes, n_features)
    labels = np.repeat(np.arange(n_classes), n_per_class)
    images = np.clip(means[labels] + noise * rng.standard_normal((labels.size, n_features)), 0.0, 1.0)
    perm = rng.permutation(labels.size)
    return ImageDataset(images[perm], labels[perm].astype(np.int64), split)


def class_means(rng: np.random.Generator, n_classes: int = N_CLASSES, n_features: int = N_PIXELS) -> np.ndarray:
    # sparse bright strokes per class, loosely digit-like in intensity statistics
    return (rng.random((n_classes, n_features)) < 0.15) * rng.uniform(0.5, 1.0, (n_classes, n_features))
