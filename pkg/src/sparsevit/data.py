"""Datasets: seeded synthetic blobs and the CIFAR-10 binary format."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError

CIFAR_SIDE = 32
CIFAR_PIXELS = CIFAR_SIDE * CIFAR_SIDE * 3
CIFAR_RECORD = 1 + CIFAR_PIXELS  # label byte + R, G, B planes


@dataclass
class Dataset:
    images: np.ndarray  # [n, H, W, C] float64 in [0, 1]
    labels: np.ndarray  # [n] int64

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4 or len(self.images) != len(self.labels):
            raise ConfigError(f"images {self.images.shape} / labels {self.labels.shape} "
                              "do not form a dataset")

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, indices) -> Dataset:
        return Dataset(self.images[indices], self.labels[indices])

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.images).tobytes())
        h.update(np.ascontiguousarray(self.labels).tobytes())
        return h.hexdigest()


@dataclass(frozen=True)
class DatasetSpec:
    source: str = "synthetic"  # "synthetic" or "cifar_binary"
    path: str | None = None
    num_classes: int = 10
    image_size: int = 32
    channels: int = 3
    train_size: int | None = 320
    test_size: int | None = 200
    noise: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.source not in ("synthetic", "cifar_binary"):
            raise ConfigError(f"unknown data.source {self.source!r}; "
                              "valid sources: synthetic, cifar_binary")
        if self.num_classes <= 0:
            raise ConfigError("data.num_classes must be positive")
        for name in ("train_size", "test_size"):
            value = getattr(self, name)
            if value is not None and value <= 0:
                raise ConfigError(f"data.{name} must be positive")
        if self.noise < 0:
            raise ConfigError("data.noise must be >= 0")


def synthetic_dataset(spec: DatasetSpec) -> tuple[Dataset, Dataset]:
    """Class-conditional Gaussian blobs: one random mean image per class plus noise.

    Labels cycle through the classes so every class is equally represented.
    Pixels are clipped to [0, 1].
    """
    rng = np.random.default_rng(spec.seed)
    shape = (spec.image_size, spec.image_size, spec.channels)
    means = rng.uniform(0.0, 1.0, size=(spec.num_classes,) + shape)

    def draw(n: int) -> Dataset:
        labels = rng.permutation(np.arange(n) % spec.num_classes)
        images = means[labels] + spec.noise * rng.standard_normal((n,) + shape)
        return Dataset(np.clip(images, 0.0, 1.0), labels)

    train = draw(spec.train_size or 320)
    test = draw(spec.test_size or 200)
    return train, test


def parse_cifar_records(raw: bytes, num_classes: int = 10) -> Dataset:
    """Decode concatenated 3073-byte CIFAR-10 records."""
    if len(raw) == 0 or len(raw) % CIFAR_RECORD:
        raise FormatError(f"CIFAR binary length {len(raw)} is not a positive multiple "
                          f"of {CIFAR_RECORD}")
    records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = records[:, 0].astype(np.int64)
    if labels.max() >= num_classes:
        raise FormatError(f"label {int(labels.max())} >= num_classes {num_classes}")
    planes = records[:, 1:].reshape(-1, 3, CIFAR_SIDE, CIFAR_SIDE)
    images = planes.transpose(0, 2, 3, 1).astype(np.float64) / 255.0
    return Dataset(images, labels)


def read_cifar_file(path, num_classes: int = 10) -> Dataset:
    return parse_cifar_records(Path(path).read_bytes(), num_classes)


def _concat(parts: list[Dataset]) -> Dataset:
    return Dataset(np.concatenate([p.images for p in parts]),
                   np.concatenate([p.labels for p in parts]))


def load_cifar_binary(path, spec: DatasetSpec) -> tuple[Dataset, Dataset]:
    """Load ``data_batch_*.bin`` and ``test_batch.bin`` from a CIFAR-10 binary directory."""
    if spec.image_size != CIFAR_SIDE or spec.channels != 3:
        raise ConfigError("CIFAR binary data is 32x32x3; model.image_size/channels disagree")
    root = Path(path)
    train_files = sorted(root.glob("data_batch_*.bin"))
    test_file = root / "test_batch.bin"
    if not train_files or not test_file.exists():
        raise FileNotFoundError(f"{root} lacks data_batch_*.bin / test_batch.bin")
    train = _concat([read_cifar_file(f, spec.num_classes) for f in train_files])
    test = read_cifar_file(test_file, spec.num_classes)
    if spec.train_size is not None:
        train = train.subset(slice(0, spec.train_size))
    if spec.test_size is not None:
        test = test.subset(slice(0, spec.test_size))
    return train, test


def load_dataset(spec: DatasetSpec) -> tuple[Dataset, Dataset]:
    if spec.source == "synthetic":
        return synthetic_dataset(spec)
    if spec.path is None:
        raise ConfigError("data.path is required for data.source = cifar_binary")
    return load_cifar_binary(spec.path, spec)
