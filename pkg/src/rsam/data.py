"""Dataset ingestion: MNIST IDX binary parsing, synthetic cluster
generation, and seeded batch iteration.

IDX files are expected pre-decompressed; pixel values are scaled to
[0, 1] on load.
"""

import struct
from dataclasses import dataclass

import numpy as np

from rsam.errors import ShapeError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    """Malformed IDX payload (bad magic or truncated data)."""


@dataclass(frozen=True)
class Dataset:
    x: np.ndarray  # sample_count x feature_dim
    y: np.ndarray  # integer labels
    meta: str = ""

    def __post_init__(self):
        if self.x.shape[0] != self.y.shape[0]:
            raise ShapeError(
                f"{self.x.shape[0]} samples but {self.y.shape[0]} labels"
            )

    def __len__(self) -> int:
        return self.x.shape[0]


@dataclass(frozen=True)
class BatchPlan:
    batch_size: int
    seed: int = 0
    multiview: bool = False
    jitter: float = 0.01  # feature noise applied to the second view

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass(frozen=True)
class Batch:
    x: np.ndarray
    y: np.ndarray
    pairing: np.ndarray | None = None  # sibling-view index per row


def parse_idx_images(data: bytes) -> np.ndarray:
    """Parse an IDX image file into a (count, rows*cols) float64 matrix
    with pixels scaled to [0, 1]."""
    if len(data) < 16:
        raise IdxFormatError(f"image header needs 16 bytes, got {len(data)}")
    magic, count, rows, cols = struct.unpack(">iiii", data[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise IdxFormatError(f"bad image magic 0x{magic:08x}")
    expected = count * rows * cols
    payload = data[16:]
    if len(payload) != expected:
        raise IdxFormatError(
            f"payload has {len(payload)} bytes, expected {expected}"
        )
    pixels = np.frombuffer(payload, dtype=np.uint8).astype(np.float64)
    return pixels.reshape(count, rows * cols) / 255.0


def parse_idx_labels(data: bytes) -> np.ndarray:
    """Parse an IDX label file into an int64 vector."""
    if len(data) < 8:
        raise IdxFormatError(f"label header needs 8 bytes, got {len(data)}")
    magic, count = struct.unpack(">ii", data[:8])
    if magic != IDX_LABELS_MAGIC:
        raise IdxFormatError(f"bad label magic 0x{magic:08x}")
    payload = data[8:]
    if len(payload) != count:
        raise IdxFormatError(f"payload has {len(payload)} bytes, expected {count}")
    return np.frombuffer(payload, dtype=np.uint8).astype(np.int64)


def serialize_idx_images(images: np.ndarray, rows: int, cols: int) -> bytes:
    """Inverse of parse_idx_images for fixtures and round-trip checks."""
    images = np.asarray(images)
    count = images.shape[0]
    if images.shape[1] != rows * cols:
        raise ShapeError(f"{images.shape[1]} features != {rows}*{cols}")
    pixels = np.clip(np.rint(images * 255.0), 0, 255).astype(np.uint8)
    return struct.pack(">iiii", IDX_IMAGES_MAGIC, count, rows, cols) + pixels.tobytes()


def serialize_idx_labels(labels: np.ndarray) -> bytes:
    labels = np.asarray(labels)
    return struct.pack(">ii", IDX_LABELS_MAGIC, labels.shape[0]) + labels.astype(
        np.uint8
    ).tobytes()


def load_mnist(images_path: str, labels_path: str) -> Dataset:
    with open(images_path, "rb") as f:
        x = parse_idx_images(f.read())
    with open(labels_path, "rb") as f:
        y = parse_idx_labels(f.read())
    return Dataset(x=x, y=y, meta=f"idx:{images_path}")


def synthetic_clusters(
    classes: int, per_class: int, feature_dim: int, separation: float, seed: int
) -> Dataset:
    """Gaussian class clusters: class c is centered at separation * e_c
    with unit isotropic noise.  Deterministic per seed."""
    if separation < 0:
        raise ValueError(f"separation must be nonnegative, got {separation}")
    if feature_dim < classes:
        raise ShapeError(
            f"feature_dim {feature_dim} must be >= number of classes {classes}"
        )
    rng = np.random.default_rng(seed)
    xs = []
    ys = []
    for c in range(classes):
        center = np.zeros(feature_dim)
        center[c] = separation
        xs.append(center + rng.standard_normal((per_class, feature_dim)))
        ys.append(np.full(per_class, c, dtype=np.int64))
    return Dataset(
        x=np.concatenate(xs),
        y=np.concatenate(ys),
        meta=f"synthetic:{classes}x{per_class}",
    )


def batches(dataset: Dataset, plan: BatchPlan, epoch: int):
    """Yield seeded shuffled batches for one epoch; the last partial
    batch is kept.  Multiview mode emits 2N rows per batch where rows
    2k and 2k+1 are two jittered views of the same source sample and
    share its label."""
    rng = np.random.default_rng(np.random.SeedSequence((plan.seed, epoch)))
    order = rng.permutation(len(dataset))
    for start in range(0, len(order), plan.batch_size):
        idx = order[start : start + plan.batch_size]
        x, y = dataset.x[idx], dataset.y[idx]
        if not plan.multiview:
            yield Batch(x=x, y=y)
            continue
        n = len(idx)
        xv = np.repeat(x, 2, axis=0)
        xv += plan.jitter * rng.standard_normal(xv.shape)
        yv = np.repeat(y, 2)
        pairing = np.arange(2 * n)
        pairing[0::2] += 1
        pairing[1::2] -= 1
        yield Batch(x=xv, y=yv, pairing=pairing)
