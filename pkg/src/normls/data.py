"""Datasets: CIFAR-10 binary batches, a procedural skewed 3-class set, splitting."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .checkpoint import load_tensors, save_tensors
from .errors import ConfigError, ContractError, DataFormatError

CIFAR10_CLASSES = ("airplane", "automobile", "bird", "cat", "deer",
                   "dog", "frog", "horse", "ship", "truck")
CIFAR10_TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
CIFAR10_TEST_FILES = ("test_batch.bin",)
CIFAR_RECORD = 1 + 3 * 32 * 32

SYNTHETIC_CLASSES = ("farm", "farm_burning", "fire")
SYNTHETIC_COUNTS = (500, 250, 108)


@dataclass
class LabeledDataset:
    images: np.ndarray  # (n, C, H, W) float64 in [0, 1]
    labels: np.ndarray  # (n,) int64
    class_names: tuple[str, ...]

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.class_names = tuple(self.class_names)
        if self.images.ndim != 4 or self.images.shape[0] != self.labels.shape[0]:
            raise ContractError(f"{self.images.shape} images vs {self.labels.shape} labels")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= len(self.class_names)):
            raise ContractError("label outside the class-name range")
        if self.images.size and (self.images.min() < 0.0 or self.images.max() > 1.0):
            raise ContractError("pixel values must lie in [0, 1]")

    def __len__(self):
        return self.labels.size

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)

    def subset(self, indices) -> "LabeledDataset":
        indices = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(self.images[indices], self.labels[indices], self.class_names)


# ---------------------------------------------------------------------------
# CIFAR-10

def parse_cifar_batch(buf: bytes, path=None) -> tuple[np.ndarray, np.ndarray]:
    """Decode 3073-byte records: label byte, then R, G, B 32x32 planes."""
    if len(buf) % CIFAR_RECORD:
        whole = len(buf) // CIFAR_RECORD
        raise DataFormatError(
            f"truncated record: {len(buf)} bytes is not a multiple of {CIFAR_RECORD}",
            path, whole * CIFAR_RECORD)
    raw = np.frombuffer(buf, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = raw[:, 0].astype(np.int64)
    bad = np.flatnonzero(labels > 9)
    if bad.size:
        raise DataFormatError(f"label byte {labels[bad[0]]} > 9", path, int(bad[0]) * CIFAR_RECORD)
    images = raw[:, 1:].reshape(-1, 3, 32, 32).astype(np.float64) / 255.0
    return images, labels


def load_cifar10(path, part: str = "train") -> LabeledDataset:
    """Load the train (5 batches) or test batch from a cifar-10-batches-bin directory."""
    names = {"train": CIFAR10_TRAIN_FILES, "test": CIFAR10_TEST_FILES}.get(part)
    if names is None:
        raise ConfigError(f"CIFAR-10 part must be 'train' or 'test', got {part!r}")
    root = Path(path)
    missing = [n for n in names if not (root / n).is_file()]
    if missing:
        raise DataFormatError(f"missing CIFAR-10 files: {', '.join(missing)}", root)
    images, labels = [], []
    for name in names:
        x, y = parse_cifar_batch((root / name).read_bytes(), root / name)
        images.append(x)
        labels.append(y)
    return LabeledDataset(np.concatenate(images), np.concatenate(labels), CIFAR10_CLASSES)


def cifar10_available(path) -> bool:
    root = Path(path)
    return all((root / n).is_file() for n in CIFAR10_TRAIN_FILES + CIFAR10_TEST_FILES)


# ---------------------------------------------------------------------------
# procedural stand-in for the skewed three-class set

def _stripes(rng, h, w):
    yy, xx = np.mgrid[0:h, 0:w]
    angle = rng.uniform(0, np.pi)
    freq = rng.uniform(0.25, 0.6)
    phase = rng.uniform(0, 2 * np.pi)
    return 0.5 + 0.5 * np.sin(freq * (np.cos(angle) * xx + np.sin(angle) * yy) + phase)


def _farm(rng, h, w):
    s = _stripes(rng, h, w)
    img = np.empty((3, h, w))
    img[0] = 0.20 + 0.10 * s
    img[1] = 0.45 + 0.25 * s
    img[2] = 0.12 + 0.08 * s
    return img


def _blob(rng, h, w):
    yy, xx = np.mgrid[0:h, 0:w]
    cy, cx = rng.uniform(0.15, 0.85) * h, rng.uniform(0.15, 0.85) * w
    r = rng.uniform(0.08, 0.18) * min(h, w)
    return np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * r * r))


def _burning(rng, h, w):
    img = _farm(rng, h, w)
    mask = np.zeros((h, w))
    for _ in range(rng.integers(1, 4)):
        mask = np.maximum(mask, _blob(rng, h, w))
    orange = np.array([0.95, 0.50, 0.10])[:, None, None]
    return img * (1 - mask) + orange * mask


def _fire(rng, h, w):
    s = _stripes(rng, h, w)
    flicker = _blob(rng, h, w)
    img = np.empty((3, h, w))
    img[0] = 0.70 + 0.20 * flicker
    img[1] = 0.25 + 0.25 * s * flicker + 0.10 * s
    img[2] = 0.05 + 0.05 * s
    return img


_GENERATORS = (_farm, _burning, _fire)


def gen_synthetic(counts=SYNTHETIC_COUNTS, size=(32, 32), seed: int = 0,
                  noise: float = 0.06) -> LabeledDataset:
    """Skewed three-class images: striped green fields, fields with orange blobs, fire."""
    counts = tuple(int(c) for c in counts)
    if len(counts) != 3:
        raise ConfigError(f"need exactly 3 class counts, got {counts}")
    if min(counts) < 1:
        raise ConfigError(f"every class needs at least one sample, got {counts}")
    h, w = size
    if h < 8 or w < 8:
        raise ConfigError(f"image size {size} is below 8x8")
    rng = np.random.default_rng(seed)
    images = np.empty((sum(counts), 3, h, w))
    labels = np.repeat(np.arange(3), counts)
    for i, label in enumerate(labels):
        img = _GENERATORS[label](rng, h, w)
        images[i] = np.clip(img + noise * rng.standard_normal(img.shape), 0.0, 1.0)
    return LabeledDataset(images, labels, SYNTHETIC_CLASSES)


# ---------------------------------------------------------------------------

def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def split(ds: LabeledDataset, val_fraction: float, seed: int) -> tuple[LabeledDataset, LabeledDataset]:
    """Stratified split.

    The validation size is round-half-up(fraction * n). Each class gets the
    floor of its proportional quota and the leftover slots go to the classes
    with the largest fractional remainders (lower class index on ties), so
    every class is within one sample of its exact share.
    """
    if not 0.0 < val_fraction < 1.0:
        raise ConfigError(f"val fraction must lie in (0, 1), got {val_fraction}")
    counts = ds.class_counts
    quota = val_fraction * counts
    n_val = np.floor(quota).astype(np.int64)
    extra = _round_half_up(val_fraction * len(ds)) - int(n_val.sum())
    order = np.argsort(-(quota - n_val), kind="stable")
    n_val[order[:extra]] += 1
    rng = np.random.default_rng(seed)
    train_idx, val_idx = [], []
    for c in range(ds.n_classes):
        if counts[c] == 0:
            continue
        if n_val[c] == 0 or n_val[c] == counts[c]:
            raise ConfigError(
                f"val fraction {val_fraction} leaves class {ds.class_names[c]!r} "
                f"({counts[c]} samples) empty in one split")
        members = rng.permutation(np.flatnonzero(ds.labels == c))
        val_idx.append(members[: n_val[c]])
        train_idx.append(members[n_val[c] :])
    train = np.sort(np.concatenate(train_idx))
    val = np.sort(np.concatenate(val_idx))
    return ds.subset(train), ds.subset(val)


def stratified_subset(ds: LabeledDataset, n: int, seed: int) -> LabeledDataset:
    """Seeded subset of ``n`` samples with per-class counts proportional to the source."""
    if n >= len(ds):
        return ds
    rng = np.random.default_rng(seed)
    counts = ds.class_counts
    want = np.floor(counts * n / counts.sum()).astype(int)
    order = np.argsort(-(counts * n / counts.sum() - want), kind="stable")
    want[order[: n - want.sum()]] += 1
    picked = [rng.permutation(np.flatnonzero(ds.labels == c))[:k] for c, k in enumerate(want)]
    return ds.subset(np.sort(np.concatenate(picked)))


def save_dataset(ds: LabeledDataset, path) -> Path:
    """Write images into the tensor container plus a ``<name>.csv`` index of (filename, label)."""
    path = Path(path)
    names = [f"img{i:06d}" for i in range(len(ds))]
    tensors = {name: img for name, img in zip(names, ds.images)}
    save_tensors(path, tensors)
    sidecar = path.with_suffix(".csv")
    with sidecar.open("w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["filename", "label"])
        for name, label in zip(names, ds.labels):
            w.writerow([name, int(label)])
    (path.with_suffix(".classes")).write_text("\n".join(ds.class_names) + "\n", encoding="utf-8")
    return sidecar


def load_dataset(path) -> LabeledDataset:
    path = Path(path)
    tensors = load_tensors(path)
    class_names = path.with_suffix(".classes").read_text(encoding="utf-8").splitlines()
    images, labels = [], []
    with path.with_suffix(".csv").open(newline="") as f:
        for row in csv.DictReader(f):
            if row["filename"] not in tensors:
                raise DataFormatError(f"index names missing tensor {row['filename']!r}", path)
            images.append(tensors[row["filename"]])
            labels.append(int(row["label"]))
    return LabeledDataset(np.stack(images), np.array(labels), class_names)
