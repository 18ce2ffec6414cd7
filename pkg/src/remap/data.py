"""Datasets: IDX file I/O, manifest loading, and synthetic fixture corpora.

The dataset wire format is IDX (big-endian; magic 0x00000803 for uint8 image
tensors, 0x00000801 for uint8 label vectors) referenced from a JSON manifest:

    {
      "images": "images.idx",          # path, relative to the manifest
      "labels": "labels.idx",
      "class_names": ["zero", ...],
      "downsample": 2,                 # optional integer mean-pool factor
      "train_count": 2000,
      "val_count": 1000
    }

Splits are taken in file order: the first train_count examples train, the
next val_count validate. Pixels are scaled to [0, 1].
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


class DataError(ValueError):
    pass


class BadMagic(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class LabelOutOfRange(DataError):
    pass


@dataclass
class Dataset:
    train_images: np.ndarray  # (n, h, w, c) float32 in [0,1]
    train_labels: np.ndarray  # (n,) int
    val_images: np.ndarray
    val_labels: np.ndarray
    class_names: list[str]

    def __post_init__(self):
        if len(self.val_images) == 0:
            raise DataError("validation split must be nonempty")
        if self.train_images.shape[1:] != self.val_images.shape[1:]:
            raise DimensionMismatch("train/val image shapes differ")
        k = self.num_classes
        for labels in (self.train_labels, self.val_labels):
            if len(labels) and (labels.min() < 0 or labels.max() >= k):
                raise LabelOutOfRange(f"labels outside [0, {k})")

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def input_shape(self) -> tuple:
        return tuple(self.train_images.shape[1:])

    def class_thumbnails(self) -> list[list[float]]:
        """One mean image per class from the validation split, for the data
        selector UI; flattened row-major, empty list for absent classes."""
        thumbs = []
        for c in range(self.num_classes):
            mask = self.val_labels == c
            if not mask.any():
                thumbs.append([])
                continue
            mean = self.val_images[mask].mean(axis=0)
            thumbs.append([round(float(v), 4) for v in mean.ravel()])
        return thumbs


# ---------------------------------------------------------------------------
# IDX encoding

def read_idx_images(path) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.read(16)
        if len(header) < 16:
            raise BadMagic(f"{path}: truncated IDX header")
        magic, count, rows, cols = struct.unpack(">IIII", header)
        if magic != IMAGE_MAGIC:
            raise BadMagic(f"{path}: magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}")
        data = np.frombuffer(f.read(), dtype=np.uint8)
    if data.size != count * rows * cols:
        raise DimensionMismatch(
            f"{path}: {data.size} pixels for {count}x{rows}x{cols} declared")
    return data.reshape(count, rows, cols)


def read_idx_labels(path) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.read(8)
        if len(header) < 8:
            raise BadMagic(f"{path}: truncated IDX header")
        magic, count = struct.unpack(">II", header)
        if magic != LABEL_MAGIC:
            raise BadMagic(f"{path}: magic {magic:#010x}, expected {LABEL_MAGIC:#010x}")
        data = np.frombuffer(f.read(), dtype=np.uint8)
    if data.size != count:
        raise DimensionMismatch(f"{path}: {data.size} labels for {count} declared")
    return data


def write_idx_images(path, images: np.ndarray) -> None:
    images = np.asarray(images, dtype=np.uint8)
    n, h, w = images.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", IMAGE_MAGIC, n, h, w))
        f.write(images.tobytes())


def write_idx_labels(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">II", LABEL_MAGIC, len(labels)))
        f.write(labels.tobytes())


def downsample(images: np.ndarray, factor: int) -> np.ndarray:
    """Mean-pool by an integer factor (trailing rows/cols are cropped)."""
    if factor == 1:
        return images
    n, h, w = images.shape[:3]
    h2, w2 = h // factor, w // factor
    cropped = images[:, : h2 * factor, : w2 * factor]
    return cropped.reshape(n, h2, factor, w2, factor).mean(axis=(2, 4))


def load_dataset(manifest_path) -> Dataset:
    """Load images+labels per the manifest, scale to [0,1], form splits."""
    manifest_path = Path(manifest_path)
    with open(manifest_path) as f:
        manifest = json.load(f)
    for key in ("images", "labels", "class_names"):
        if key not in manifest:
            raise DataError(f"manifest missing {key!r}")
    base = manifest_path.parent
    images = read_idx_images(base / manifest["images"]).astype(np.float32) / 255.0
    labels = read_idx_labels(base / manifest["labels"]).astype(np.int64)
    if len(images) != len(labels):
        raise DimensionMismatch(f"{len(images)} images vs {len(labels)} labels")
    factor = int(manifest.get("downsample", 1))
    if factor > 1:
        images = downsample(images, factor)
    images = images[..., None]  # single channel
    class_names = list(manifest["class_names"])
    if len(labels) and labels.max() >= len(class_names):
        raise LabelOutOfRange(
            f"label {labels.max()} but only {len(class_names)} class names")
    n_train = int(manifest.get("train_count", int(0.8 * len(images))))
    n_val = int(manifest.get("val_count", len(images) - n_train))
    if n_train + n_val > len(images):
        raise DimensionMismatch(
            f"splits {n_train}+{n_val} exceed {len(images)} examples")
    return Dataset(
        train_images=images[:n_train],
        train_labels=labels[:n_train],
        val_images=images[n_train : n_train + n_val],
        val_labels=labels[n_train : n_train + n_val],
        class_names=class_names,
    )


# ---------------------------------------------------------------------------
# synthetic corpora (fixtures and offline stand-ins)

# 7x5 glyph bitmaps for digits 0-9.
_GLYPHS = [
    "01110 10001 10011 10101 11001 10001 01110",
    "00100 01100 00100 00100 00100 00100 01110",
    "01110 10001 00001 00110 01000 10000 11111",
    "11110 00001 00001 01110 00001 00001 11110",
    "00010 00110 01010 10010 11111 00010 00010",
    "11111 10000 11110 00001 00001 10001 01110",
    "00110 01000 10000 11110 10001 10001 01110",
    "11111 00001 00010 00100 01000 01000 01000",
    "01110 10001 10001 01110 10001 10001 01110",
    "01110 10001 10001 01111 00001 00010 01100",
]


def _glyph_array(digit: int) -> np.ndarray:
    rows = _GLYPHS[digit].split()
    return np.array([[int(ch) for ch in row] for row in rows], dtype=np.float32)


def synthetic_digits(count: int, seed: int = 0, size: int = 14,
                     noise: float = 0.10) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic digit-image corpus: jittered glyph placements with
    per-image contrast and additive noise. uint8 images, shape (count, size,
    size); labels cycle through 0..9 shuffled.

    Serves as an offline stand-in for handwritten-digit corpora; written out
    via write_idx_* it round-trips through the same loader as the real files.
    """
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 10, size=count)
    images = np.zeros((count, size, size), dtype=np.float32)
    for i, digit in enumerate(labels):
        glyph = _glyph_array(int(digit))
        if rng.random() < 0.3:  # occasional thicker 9x7 variant
            glyph = np.repeat(np.repeat(glyph, 2, 0), 2, 1)[:9, :7]
        gh, gw = glyph.shape
        # roughly centered with +-1 px jitter, like scanned handwriting
        top = (size - gh) // 2 + int(rng.integers(-1, 2))
        left = (size - gw) // 2 + int(rng.integers(-1, 2))
        top = min(max(top, 0), size - gh)
        left = min(max(left, 0), size - gw)
        contrast = 0.7 + 0.3 * rng.random()
        images[i, top : top + gh, left : left + gw] = glyph * contrast
        images[i] += rng.normal(0.0, noise, (size, size)).astype(np.float32)
    images = np.clip(images, 0.0, 1.0)
    return (images * 255).astype(np.uint8), labels.astype(np.uint8)


def write_synthetic_manifest(directory, count: int = 3000, seed: int = 7,
                             size: int = 14, train_count: int = 2000,
                             val_count: int = 1000) -> Path:
    """Materialize a synthetic digit corpus as IDX files plus manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    images, labels = synthetic_digits(count, seed=seed, size=size)
    write_idx_images(directory / "images.idx", images)
    write_idx_labels(directory / "labels.idx", labels)
    manifest = {
        "images": "images.idx",
        "labels": "labels.idx",
        "class_names": ["zero", "one", "two", "three", "four",
                        "five", "six", "seven", "eight", "nine"],
        "train_count": train_count,
        "val_count": val_count,
    }
    path = directory / "dataset.json"
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2)
    return path


def halves_dataset(n_train: int = 200, n_val: int = 80, size: int = 8,
                   seed: int = 0) -> Dataset:
    """Linearly separable two-class task: class 0 images are bright on the
    left half, class 1 on the right. Used as a trainer oracle."""
    rng = np.random.default_rng(seed)
    n = n_train + n_val
    labels = rng.integers(0, 2, size=n)
    images = rng.uniform(0.0, 0.25, size=(n, size, size, 1)).astype(np.float32)
    half = size // 2
    for i, label in enumerate(labels):
        cols = slice(half, size) if label else slice(0, half)
        images[i, :, cols, 0] += 0.6
    images = np.clip(images, 0.0, 1.0)
    return Dataset(
        train_images=images[:n_train],
        train_labels=labels[:n_train].astype(np.int64),
        val_images=images[n_train:],
        val_labels=labels[n_train:].astype(np.int64),
        class_names=["left", "right"],
    )
