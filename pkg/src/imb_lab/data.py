"""Datasets: MNIST IDX files, the enumerable binary task, CSV, splits and batches."""

from __future__ import annotations

import csv
import gzip
import math
import struct
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .exceptions import IDXFormatError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
LABEL_RULES = ("linear", "random")


@dataclass(frozen=True)
class ExactJoint:
    """Full-support law of an enumerable task: ``pxy[k, y]`` over ``patterns[k]``."""

    patterns: np.ndarray
    pxy: np.ndarray

    @property
    def px(self):
        return self.pxy.sum(axis=1)


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    n_classes: int
    provenance: str = "custom"
    joint: ExactJoint | None = None

    def __post_init__(self):
        if self.inputs.ndim != 2 or self.inputs.shape[0] != self.labels.shape[0]:
            raise ValueError("inputs must be (N, d) with one label per row")
        if self.inputs.shape[0] == 0:
            raise ValueError("a dataset needs at least one example")
        if self.labels.min() < 0 or self.labels.max() >= self.n_classes:
            raise ValueError(f"labels must lie in 0..{self.n_classes - 1}")
        if self.joint is not None and abs(self.joint.pxy.sum() - 1.0) > 1e-12:
            raise ValueError("the exact joint must sum to 1 within 1e-12")

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def n_features(self):
        return self.inputs.shape[1]

    def subset(self, index) -> "Dataset":
        index = np.asarray(index)
        return replace(self, inputs=self.inputs[index], labels=self.labels[index])

    def head(self, n) -> "Dataset":
        return self.subset(np.arange(min(int(n), len(self))))


def _balanced_labels(scores, tie_break):
    """Label the top half of ``scores`` as class 1; ``tie_break`` orders equal scores."""
    order = np.lexsort((tie_break, scores))
    labels = np.zeros(len(scores), dtype=int)
    labels[order[len(scores) // 2 :]] = 1
    return labels


def gen_binary_task(seed, n_bits=12, *, label_rule="linear", noise=0.0) -> Dataset:
    """All ``2**n_bits`` binary patterns, equally likely, with balanced binary labels.

    ``label_rule="linear"`` thresholds a seeded random projection of the
    pattern at its median, which gives a learnable rule;
    ``label_rule="random"`` draws a seeded balanced random partition.
    Exactly half of the patterns get ``y = 1`` either way. ``noise`` flips the
    label with that probability in the stored joint, making ``H(Y|X) > 0``.
    Pattern ``k`` has bit ``i`` equal to ``(k >> i) & 1``.
    """
    if not 1 <= n_bits <= 20:
        raise ValueError("n_bits must be in 1..20")
    if label_rule not in LABEL_RULES:
        raise ValueError(f"label_rule must be one of {LABEL_RULES}")
    if not 0.0 <= noise < 0.5:
        raise ValueError("noise must lie in [0, 0.5)")
    rng = np.random.default_rng([int(seed), n_bits, 0x7A5C])
    n = 2**n_bits
    patterns = ((np.arange(n)[:, None] >> np.arange(n_bits)) & 1).astype(float)
    tie_break = rng.permutation(n)
    if label_rule == "linear":
        w = rng.standard_normal(n_bits)
        scores = patterns @ w
    else:
        scores = np.zeros(n)
    labels = _balanced_labels(scores, tie_break)
    pxy = np.zeros((n, 2))
    pxy[np.arange(n), labels] = (1.0 - noise) / n
    pxy[np.arange(n), 1 - labels] = noise / n
    return Dataset(patterns, labels, 2, "synthetic", ExactJoint(patterns, pxy))


# IDX files ------------------------------------------------------------------

def _open(path):
    path = Path(path)
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def read_idx(path, expected_magic=None) -> np.ndarray:
    """Parse an unsigned-byte IDX file into an array of its declared shape."""
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise IDXFormatError(f"{path}: file too short for the magic number", 0)
    (magic,) = struct.unpack(">I", raw[:4])
    if expected_magic is not None and magic != expected_magic:
        raise IDXFormatError(f"{path}: bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}", 0)
    if magic >> 16 != 0 or (magic >> 8) & 0xFF != 0x08:
        raise IDXFormatError(f"{path}: bad magic 0x{magic:08x} (only unsigned-byte IDX is supported)", 0)
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IDXFormatError(f"{path}: truncated dimension header", len(raw))
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    size = math.prod(dims)
    if len(raw) < header + size:
        raise IDXFormatError(f"{path}: truncated payload, expected {size} bytes after the header", len(raw))
    if len(raw) > header + size:
        raise IDXFormatError(f"{path}: {len(raw) - header - size} trailing bytes", header + size)
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header).reshape(dims)


def write_idx(path, array):
    """Write a uint8 array as an IDX file (gzip-compressed when the name ends in .gz)."""
    array = np.asarray(array)
    if array.dtype != np.uint8:
        raise ValueError("only uint8 payloads are supported")
    header = struct.pack(">I", (0x08 << 8) | array.ndim) + struct.pack(f">{array.ndim}I", *array.shape)
    opener = gzip.open if Path(path).suffix == ".gz" else open
    with opener(path, "wb") as fh:
        fh.write(header + array.tobytes())


def load_mnist_idx(image_path, label_path) -> Dataset:
    """MNIST images scaled to [0, 1] by 1/255 and flattened to 784 features."""
    images = read_idx(image_path, IDX_IMAGES_MAGIC)
    labels = read_idx(label_path, IDX_LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise IDXFormatError(
            f"{image_path} holds {images.shape[0]} images but {label_path} holds {labels.shape[0]} labels", 4
        )
    inputs = images.reshape(images.shape[0], -1).astype(float) / 255.0
    return Dataset(inputs, labels.astype(int), 10, "mnist")


def find_mnist_files(directory, split="train") -> tuple[Path, Path]:
    """Locate the image and label files of a split, accepting common file names."""
    directory = Path(directory)
    stem = "train" if split == "train" else "t10k"
    for sep in ("-", "."):
        for suffix in ("", ".gz"):
            images = directory / f"{stem}-images{sep}idx3-ubyte{suffix}"
            labels = directory / f"{stem}-labels{sep}idx1-ubyte{suffix}"
            if images.exists() and labels.exists():
                return images, labels
    raise FileNotFoundError(f"no MNIST {split} IDX files in {directory}")


# CSV ------------------------------------------------------------------------

def to_csv(dataset: Dataset, path):
    """Columns ``x_0 .. x_{d-1}, y``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"x_{i}" for i in range(dataset.n_features)] + ["y"])
        for x, y in zip(dataset.inputs, dataset.labels):
            writer.writerow([format(v, ".10g") for v in x] + [int(y)])


def load_csv(path, n_classes=None) -> Dataset:
    """Flat-vector CSV with a header and the label in the last column."""
    table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    labels = table[:, -1].astype(int)
    n_classes = int(n_classes or labels.max() + 1)
    return Dataset(table[:, :-1], labels, n_classes, "custom")


# Splits and batches -----------------------------------------------------------

def train_size(n, holdout_fraction) -> int:
    """``ceil((1 - f) * n)``, robust to the float error in ``f``."""
    return n - math.floor(holdout_fraction * n + 1e-9)


class BatchSampler:
    """Seeded minibatches covering every training row once per epoch."""

    def __init__(self, n, batch_size, seed):
        if batch_size > n:
            warnings.warn(f"batch size {batch_size} exceeds {n} training rows; using one full batch")
            batch_size = n
        self.n = n
        self.batch_size = max(int(batch_size), 1)
        self.seed = int(seed)

    def __len__(self):
        return math.ceil(self.n / self.batch_size)

    def epoch(self, e) -> list[np.ndarray]:
        order = np.random.default_rng([self.seed, int(e), 0xBA7C]).permutation(self.n)
        return [order[i : i + self.batch_size] for i in range(0, self.n, self.batch_size)]


def split_and_batch(dataset: Dataset, holdout_fraction, batch_size, seed, convention=None):
    """Split off a holdout set and build the training batch sampler.

    MNIST (``convention="tail"``) holds out the last rows; synthetic data
    (``convention="shuffle"``) is shuffled with ``seed`` first. The training
    part has ``ceil((1 - f) * N)`` rows. Returns ``(train, holdout, sampler)``;
    ``holdout`` is ``None`` when the fraction is zero.
    """
    if not 0 <= holdout_fraction < 1:
        raise ValueError("holdout_fraction must lie in [0, 1)")
    if convention is None:
        convention = "tail" if dataset.provenance == "mnist" else "shuffle"
    n = len(dataset)
    n_train = train_size(n, holdout_fraction)
    if convention == "tail":
        order = np.arange(n)
    elif convention == "shuffle":
        order = np.random.default_rng([int(seed), 0x5B17]).permutation(n)
    else:
        raise ValueError("convention must be 'tail' or 'shuffle'")
    train = dataset.subset(order[:n_train])
    holdout = dataset.subset(order[n_train:]) if n_train < n else None
    return train, holdout, BatchSampler(n_train, batch_size, seed)
