"""Dataset construction: synthetic two-class images, IDX files, splits."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .seeds import DATA, SPLIT, stream

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    """An IDX file does not parse as expected."""


class IdxMagicError(IdxFormatError):
    """The magic number is not an IDX image or label magic."""


class IdxTruncatedError(IdxFormatError):
    """The file ends before its declared payload."""


class IdxCountMismatchError(IdxFormatError):
    """Image and label files declare different sample counts."""


@dataclass
class Dataset:
    """Labeled image vectors with values in [0, 1] and binary labels."""

    images: np.ndarray  # [n, width * height] float64
    labels: np.ndarray  # [n] int64 in {0, 1}
    width: int
    height: int
    source: str = ""

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 2 or self.images.shape[0] != self.labels.shape[0]:
            raise ValueError(
                f"images {self.images.shape} and labels {self.labels.shape} disagree"
            )
        if self.images.shape[1] != self.width * self.height:
            raise ValueError(
                f"image width*height {self.width}x{self.height} does not match "
                f"vector length {self.images.shape[1]}"
            )
        if self.images.size and (self.images.min() < 0.0 or self.images.max() > 1.0):
            raise ValueError("pixel values must lie in [0, 1]")
        if not np.isin(self.labels, (0, 1)).all():
            raise ValueError("labels must be 0 or 1")

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def image_dim(self) -> int:
        return self.width * self.height

    def class_indices(self, label: int) -> np.ndarray:
        return np.flatnonzero(self.labels == label)


def feature_mask(width: int, height: int) -> np.ndarray:
    """Boolean [height, width] mask of the class-1 bar region.

    The bar sits in the lower third of the image and spans most of the
    width; the same geometry is used by the generator and by checks that
    ask where class information lives in pixel space.
    """
    row_start = (2 * height + 2) // 3
    bar_rows = max(1, round(height / 4))
    col_start = width // 8
    mask = np.zeros((height, width), dtype=bool)
    mask[row_start : min(row_start + bar_rows, height), col_start : width - col_start] = True
    return mask


def generate_synthetic(count: int, width: int, height: int, seed: int) -> Dataset:
    """Two-class grayscale images: a blob background, plus a bright bar for class 1.

    Half the samples carry the bar (label 1), half do not (label 0). Every
    sample gets its own jittered blob center, radius and amplitude, and
    additive Gaussian pixel noise of standard deviation 0.05; values are
    clamped to [0, 1]. The same (count, width, height, seed) always
    produces bitwise-identical data.
    """
    if count <= 0 or count % 2 != 0:
        raise ValueError(f"count must be positive and even, got {count}")
    if width < 8 or height < 8:
        raise ValueError(f"width and height must be at least 8, got {width}x{height}")
    rng = stream(seed, DATA)
    mask = feature_mask(width, height)
    rows, cols = np.mgrid[0:height, 0:width].astype(np.float64)
    labels = np.arange(count, dtype=np.int64) % 2
    images = np.empty((count, width * height), dtype=np.float64)
    for i, label in enumerate(labels):
        # blob stays in the upper part so the bar region is dark for class 0
        center_r = height * (0.30 + rng.uniform(-0.05, 0.05))
        center_c = width * (0.50 + rng.uniform(-0.08, 0.08))
        radius = min(width, height) * (0.20 + rng.uniform(-0.03, 0.03))
        amplitude = 0.65 + rng.uniform(-0.10, 0.10)
        img = 0.05 + amplitude * np.exp(
            -((rows - center_r) ** 2 + (cols - center_c) ** 2) / (2.0 * radius**2)
        )
        if label == 1:
            img[mask] += 0.85 + rng.uniform(-0.05, 0.05)
        img += rng.normal(0.0, 0.05, size=(height, width))
        images[i] = np.clip(img, 0.0, 1.0).reshape(-1)
    bar = np.argwhere(mask)
    source = (
        f"synthetic(count={count},width={width},height={height},seed={seed},"
        f"bar_rows={bar[:, 0].min()}-{bar[:, 0].max()},"
        f"bar_cols={bar[:, 1].min()}-{bar[:, 1].max()})"
    )
    return Dataset(images, labels, width, height, source)


def _read_exact(handle, n: int, path, what: str) -> bytes:
    chunk = handle.read(n)
    if len(chunk) != n:
        raise IdxTruncatedError(f"{path}: expected {n} bytes for {what}, got {len(chunk)}")
    return chunk


def load_idx(image_path, label_path, positive_labels) -> Dataset:
    """Load an IDX image/label file pair and binarize the labels.

    Raw label values in ``positive_labels`` map to 1, everything else to 0.
    Pixels are scaled to [0, 1] by division by 255.
    """
    image_path, label_path = Path(image_path), Path(label_path)
    positive = frozenset(int(v) for v in positive_labels)
    with open(image_path, "rb") as fh:
        (magic,) = struct.unpack(">I", _read_exact(fh, 4, image_path, "magic"))
        if magic != IDX_IMAGE_MAGIC:
            raise IdxMagicError(
                f"{image_path}: magic {magic:#010x}, expected {IDX_IMAGE_MAGIC:#010x}"
            )
        count, height, width = struct.unpack(
            ">III", _read_exact(fh, 12, image_path, "dimensions")
        )
        pixels = _read_exact(fh, count * height * width, image_path, "pixels")
    with open(label_path, "rb") as fh:
        (magic,) = struct.unpack(">I", _read_exact(fh, 4, label_path, "magic"))
        if magic != IDX_LABEL_MAGIC:
            raise IdxMagicError(
                f"{label_path}: magic {magic:#010x}, expected {IDX_LABEL_MAGIC:#010x}"
            )
        (label_count,) = struct.unpack(">I", _read_exact(fh, 4, label_path, "count"))
        raw_labels = _read_exact(fh, label_count, label_path, "labels")
    if label_count != count:
        raise IdxCountMismatchError(
            f"{image_path} holds {count} images but {label_path} holds "
            f"{label_count} labels"
        )
    images = np.frombuffer(pixels, dtype=np.uint8).astype(np.float64) / 255.0
    labels = np.fromiter(
        (1 if b in positive else 0 for b in raw_labels), dtype=np.int64, count=count
    )
    return Dataset(
        images.reshape(count, height * width),
        labels,
        width,
        height,
        source=f"idx({image_path.name},{label_path.name})",
    )


def save_idx(dataset: Dataset, image_path, label_path) -> None:
    """Write a dataset as an IDX image/label file pair (pixels quantized to bytes)."""
    pixels = np.rint(dataset.images * 255.0).astype(np.uint8)
    with open(image_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGE_MAGIC, len(dataset), dataset.height, dataset.width))
        fh.write(pixels.tobytes())
    with open(label_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABEL_MAGIC, len(dataset)))
        fh.write(dataset.labels.astype(np.uint8).tobytes())


def split(dataset: Dataset, test_count: int, seed: int) -> tuple[Dataset, Dataset]:
    """Seeded stratified split into disjoint train and test sets.

    Per-class test quotas follow the class ratio (largest remainder), and
    both classes must stay non-empty on both sides.
    """
    n = len(dataset)
    if not 0 < test_count < n:
        raise ValueError(f"test_count must be in (0, {n}), got {test_count}")
    rng = stream(seed, SPLIT)
    class_idx = {label: dataset.class_indices(label) for label in (0, 1)}
    exact = {label: test_count * len(idx) / n for label, idx in class_idx.items()}
    quota = {label: int(np.floor(v)) for label, v in exact.items()}
    leftover = test_count - sum(quota.values())
    for label, _ in sorted(exact.items(), key=lambda kv: kv[1] - int(np.floor(kv[1])), reverse=True):
        if leftover == 0:
            break
        quota[label] += 1
        leftover -= 1
    test_parts, train_parts = [], []
    for label in (0, 1):
        idx = class_idx[label]
        if not 0 < quota[label] < len(idx):
            raise ValueError(
                f"cannot keep class {label} non-empty on both sides: "
                f"{len(idx)} samples, test quota {quota[label]}"
            )
        perm = rng.permutation(idx)
        test_parts.append(perm[: quota[label]])
        train_parts.append(perm[quota[label] :])
    test_idx = np.sort(np.concatenate(test_parts))
    train_idx = np.sort(np.concatenate(train_parts))

    def subset(idx: np.ndarray, tag: str) -> Dataset:
        return Dataset(
            dataset.images[idx],
            dataset.labels[idx],
            dataset.width,
            dataset.height,
            source=f"{dataset.source}|{tag}",
        )

    return subset(train_idx, "train"), subset(test_idx, "test")
