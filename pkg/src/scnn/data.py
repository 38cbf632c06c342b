"""Dataset loading and deterministic synthetic data for tests.

Real data comes from the classic binary formats: big-endian IDX files
for the digit set and 3073-byte label+RGB records for the 32x32 color
set.  Users place the files locally; nothing here touches the network.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from scnn import ops

IDX_IMAGE_MAGIC = 2051
IDX_LABEL_MAGIC = 2049
CIFAR_RECORD_BYTES = 3073  # 1 label byte + 3 * 1024 pixels

# Pixels are scaled by 1/256 (not 1/255): with a fixed learning rate the
# input scale is part of the training recipe.
PIXEL_SCALE = 1.0 / 256.0

SEPARABLE_MARGIN = 0.3


class DataFormatError(ValueError):
    """Raised when a dataset file does not parse."""


@dataclass(frozen=True)
class Dataset:
    """Immutable labelled image set: images (N, C, H, W), labels (N,)."""

    images: np.ndarray
    labels: np.ndarray
    num_classes: int
    source: str

    def __post_init__(self):
        if self.images.ndim != 4:
            raise DataFormatError(f"images must be (N, C, H, W), got {self.images.shape}")
        if self.labels.shape != (self.images.shape[0],):
            raise DataFormatError(
                f"label count {self.labels.shape} does not match {self.images.shape[0]} images"
            )
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DataFormatError(
                f"labels must lie in [0, {self.num_classes}), got "
                f"[{self.labels.min()}, {self.labels.max()}]"
            )
        if not np.isfinite(self.images).all():
            raise DataFormatError("images contain non-finite values")

    def __len__(self) -> int:
        return self.images.shape[0]


def _read_idx(path, magic_want: int, header_dims: int) -> tuple[np.ndarray, tuple[int, ...]]:
    raw = Path(path).read_bytes()
    header = 4 * (1 + header_dims)
    if len(raw) < header:
        raise DataFormatError(f"{path}: truncated header ({len(raw)} bytes)")
    fields = struct.unpack(f">{1 + header_dims}i", raw[:header])
    magic, dims = fields[0], fields[1:]
    if magic != magic_want:
        raise DataFormatError(f"{path}: bad magic {magic}, expected {magic_want}")
    expected = int(np.prod(dims))
    body = np.frombuffer(raw, dtype=np.uint8, offset=header)
    if body.size != expected:
        raise DataFormatError(
            f"{path}: truncated body, expected {expected} bytes, found {body.size}"
        )
    return body, dims


def load_mnist(images_path, labels_path) -> Dataset:
    """Load an IDX image/label file pair.

    Images become an (N, 1, rows, cols) array scaled by 1/256, so pixel
    values lie in [0, 255/256].  Labels are 0..9.
    """
    pixels, (n, rows, cols) = _read_idx(images_path, IDX_IMAGE_MAGIC, 3)
    labels, (n_labels,) = _read_idx(labels_path, IDX_LABEL_MAGIC, 1)
    if n != n_labels:
        raise DataFormatError(
            f"image/label count mismatch: {n} images vs {n_labels} labels"
        )
    images = pixels.reshape(n, 1, rows, cols).astype(ops.default_dtype()) * PIXEL_SCALE
    return Dataset(images=images, labels=labels.astype(np.int64), num_classes=10, source="mnist")


def load_cifar10(batch_paths, subtract_channel_means: bool = False) -> Dataset:
    """Load one or more binary batch files of 3073-byte records.

    Each record is one label byte followed by 1024 R, 1024 G and 1024 B
    bytes in row-major order.  Pixels are scaled to [0, 1); per-channel
    mean subtraction over the loaded set is opt-in.
    """
    chunks, labels = [], []
    for path in batch_paths:
        raw = np.frombuffer(Path(path).read_bytes(), dtype=np.uint8)
        if raw.size == 0 or raw.size % CIFAR_RECORD_BYTES != 0:
            raise DataFormatError(
                f"{path}: size {raw.size} is not a positive multiple of {CIFAR_RECORD_BYTES}"
            )
        records = raw.reshape(-1, CIFAR_RECORD_BYTES)
        batch_labels = records[:, 0]
        if batch_labels.max() >= 10:
            raise DataFormatError(f"{path}: label {batch_labels.max()} out of range (>= 10)")
        labels.append(batch_labels.astype(np.int64))
        chunks.append(records[:, 1:].reshape(-1, 3, 32, 32))
    images = np.concatenate(chunks).astype(ops.default_dtype()) * PIXEL_SCALE
    if subtract_channel_means:
        images = images - images.mean(axis=(0, 2, 3), keepdims=True)
    return Dataset(
        images=images, labels=np.concatenate(labels), num_classes=10, source="cifar10"
    )


def one_hot(label, num_classes: int) -> np.ndarray:
    """One-hot encode an integer label (or an array of them)."""
    labels = np.asarray(label)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError(f"label out of range [0, {num_classes}): {label}")
    eye = np.eye(num_classes, dtype=ops.default_dtype())
    return eye[labels]


def _centered_noise(rng, shape, amplitude):
    noise = rng.uniform(-amplitude, amplitude, size=shape)
    return noise - noise.mean(axis=(-2, -1), keepdims=True)


def _make_separable(n_samples: int, image_size: int, rng) -> tuple[np.ndarray, np.ndarray]:
    """Class is a global mean-intensity threshold at 0.5 with a guaranteed
    per-sample margin: class-0 means lie in [0.15, 0.35], class-1 means in
    [0.65, 0.85]."""
    half = n_samples // 2
    labels = np.array([0] * half + [1] * half)
    targets = np.where(
        labels == 0,
        rng.uniform(0.15, 0.35, size=n_samples),
        rng.uniform(0.65, 0.85, size=n_samples),
    )
    noise = _centered_noise(rng, (n_samples, 1, image_size, image_size), 0.1)
    images = targets[:, None, None, None] + noise
    return images, labels


def _make_multiscale(n_samples: int, image_size: int, rng) -> tuple[np.ndarray, np.ndarray]:
    """Class 1 is the conjunction of a fine 2x2 checker motif and a coarse
    left-bright/right-dark split; class 0 draws uniformly from the three
    remaining cue combinations.  Both cues are mean-neutral, so global
    intensity carries no label signal and no single scale suffices.
    """
    half = n_samples // 2
    labels = np.array([1] * half + [0] * half)
    fine = np.empty(n_samples, dtype=int)
    coarse = np.empty(n_samples, dtype=int)
    fine[:half] = 1
    coarse[:half] = 1
    others = rng.integers(0, 3, size=n_samples - half)  # (fine, coarse) in {00, 01, 10}
    fine[half:] = others // 2
    coarse[half:] = others % 2

    s = image_size
    images = 0.5 + _centered_noise(rng, (n_samples, 1, s, s), 0.05)
    shift = 0.15
    for i in range(n_samples):
        if coarse[i] == 1:  # left half bright, right half dark
            images[i, 0, :, : s // 2] += shift
            images[i, 0, :, s // 2 :] -= shift
        else:  # top half bright, bottom half dark
            images[i, 0, : s // 2, :] += shift
            images[i, 0, s // 2 :, :] -= shift
        hi, lo = 0.9, 0.1
        motif = (
            np.array([[hi, lo], [lo, hi]]) if fine[i] == 1 else np.array([[lo, hi], [hi, lo]])
        )
        for _ in range(3):
            r = rng.integers(0, s - 1)
            c = rng.integers(0, s - 1)
            images[i, 0, r : r + 2, c : c + 2] = motif

    order = rng.permutation(n_samples)
    return images[order], labels[order]


def make_synthetic(kind: str, n_samples: int, image_size: int, seed: int) -> Dataset:
    """Deterministic two-class image sets for desk-scale experiments.

    ``separable`` is solvable from global mean intensity alone;
    ``multiscale`` requires combining a fine texture cue with a coarse
    layout cue.  The same (kind, n_samples, image_size, seed) always
    yields the identical dataset.
    """
    if n_samples < 2 or n_samples % 2 != 0:
        raise ValueError(f"n_samples must be even and >= 2, got {n_samples}")
    if image_size < 4:
        raise ValueError(f"image_size must be >= 4, got {image_size}")
    rng = np.random.default_rng(seed)
    if kind == "separable":
        images, labels = _make_separable(n_samples, image_size, rng)
    elif kind == "multiscale":
        images, labels = _make_multiscale(n_samples, image_size, rng)
    else:
        raise ValueError(f"unknown synthetic kind {kind!r}")
    return Dataset(
        images=images.astype(ops.default_dtype()),
        labels=labels.astype(np.int64),
        num_classes=2,
        source="synthetic",
    )


def mean_intensity_stump_accuracy(dataset: Dataset) -> float:
    """Best training accuracy of a one-threshold classifier on per-image
    mean intensity, over both threshold orientations.  The oracle that
    separable data must satisfy and multiscale data must defeat."""
    means = dataset.images.mean(axis=(1, 2, 3))
    order = np.argsort(means)
    sorted_labels = dataset.labels[order]
    n = len(sorted_labels)
    # cut after position i: left -> class a, right -> class b
    left_ones = np.concatenate([[0], np.cumsum(sorted_labels == 1)])
    total_ones = left_ones[-1]
    best = 0
    for i in range(n + 1):
        ones_left = left_ones[i]
        zeros_left = i - ones_left
        # left=0/right=1 and left=1/right=0
        correct_a = zeros_left + (total_ones - ones_left)
        correct_b = ones_left + ((n - i) - (total_ones - ones_left))
        best = max(best, correct_a, correct_b)
    return best / n
