"""Datasets, the Bernoulli labeled split, augmentation and the two samplers."""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rng as rngmod
from .errors import (
    DataError,
    EmptySupervisionError,
    FormatError,
    LengthError,
    SamplingError,
)

MAGIC = b"SNDS"
VERSION = 1
_HEADER = struct.Struct("<4sIQQI")


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise DataError(f"features must be 2-D, got shape {self.features.shape}")
        n, d = self.features.shape
        if n < 1 or d < 1:
            raise DataError(f"dataset needs n >= 1 and d_in >= 1, got {n}x{d}")
        if self.labels.shape != (n,):
            raise DataError(f"labels shape {self.labels.shape} != ({n},)")
        if self.n_classes < 1:
            raise DataError("n_classes must be >= 1")
        if self.labels.min() < 0 or self.labels.max() >= self.n_classes:
            raise DataError(f"labels must lie in [0, {self.n_classes})")
        missing = set(range(self.n_classes)) - set(np.unique(self.labels).tolist())
        if missing:
            raise DataError(f"classes without any example: {sorted(missing)}")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d_in(self) -> int:
        return self.features.shape[1]


def save_dataset(ds: Dataset, path) -> None:
    """Write ``ds`` in the little-endian SNDS binary layout.

    Features are stored as float32, so they must be float32-representable
    for the round trip to be exact.
    """
    header = _HEADER.pack(MAGIC, VERSION, ds.n, ds.d_in, ds.n_classes)
    feats = ds.features.astype("<f4").tobytes()
    labels = ds.labels.astype("<i4").tobytes()
    Path(path).write_bytes(header + feats + labels)


def load_dataset(path) -> Dataset:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return load_csv(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise LengthError(f"{path}: file shorter than the {_HEADER.size}-byte header")
    magic, version, n, d, n_classes = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    need = _HEADER.size + 4 * n * d + 4 * n
    if len(raw) < need:
        raise LengthError(f"{path}: payload truncated ({len(raw)} of {need} bytes)")
    if len(raw) > need:
        raise LengthError(f"{path}: {len(raw) - need} trailing bytes after payload")
    off = _HEADER.size
    feats = np.frombuffer(raw, dtype="<f4", count=n * d, offset=off).reshape(n, d)
    labels = np.frombuffer(raw, dtype="<i4", count=n, offset=off + 4 * n * d)
    return Dataset(feats.astype(np.float64), labels.astype(np.int64), int(n_classes))


def save_csv(ds: Dataset, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"f{j}" for j in range(ds.d_in)] + ["label"])
        for row, y in zip(ds.features, ds.labels):
            w.writerow([repr(float(v)) for v in row] + [int(y)])


def load_csv(path) -> Dataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty CSV") from None
        d = len(header) - 1
        if d < 1 or header != [f"f{j}" for j in range(d)] + ["label"]:
            raise FormatError(f"{path}: header must be f0,...,f{{d-1}},label")
        feats, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != d + 1:
                raise FormatError(f"{path}:{lineno}: expected {d + 1} fields")
            try:
                feats.append([float(v) for v in row[:-1]])
                labels.append(int(row[-1]))
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
    if not feats:
        raise LengthError(f"{path}: no data rows")
    labels = np.asarray(labels, dtype=np.int64)
    return Dataset(np.asarray(feats), labels, int(labels.max()) + 1)


def synthetic_blobs(
    n: int = 2000,
    d_in: int = 32,
    n_classes: int = 10,
    seed: int = 0,
    class_dims: int = 8,
    separation: float = 3.0,
    clusters_per_class: int = 3,
    draw: int = 1,
) -> Dataset:
    """Unit-variance Gaussian blobs, ``clusters_per_class`` of them per class.

    Blob centers are N(0, separation^2) in the first ``class_dims``
    coordinates and zero elsewhere; a random rotation then mixes all
    coordinates. With several blobs per class the classes are not linearly
    separable in input space. Centers and rotation depend only on ``seed``;
    ``draw`` selects the sample stream, so ``draw=2`` is a held-out set from
    the same distribution.
    """
    if not 1 <= class_dims <= d_in:
        raise DataError("class_dims must lie in [1, d_in]")
    geo = rngmod.stream(seed, rngmod.SYNTHETIC, 0)
    n_blobs = n_classes * clusters_per_class
    centers = np.zeros((n_blobs, d_in))
    centers[:, :class_dims] = geo.standard_normal((n_blobs, class_dims)) * separation
    rot, _ = np.linalg.qr(geo.standard_normal((d_in, d_in)))

    gen = rngmod.stream(seed, rngmod.SYNTHETIC, draw)
    blob = (np.arange(n) % n_blobs)[gen.permutation(n)]
    x = (centers[blob] + gen.standard_normal((n, d_in))) @ rot.T
    # float32-representable so the binary format round-trips exactly
    x = x.astype(np.float32).astype(np.float64)
    return Dataset(x, blob % n_classes, n_classes)


@dataclass
class LabelSplit:
    mask: np.ndarray
    seed: int
    p: float

    def labeled_indices(self) -> np.ndarray:
        return np.flatnonzero(self.mask)

    def by_class(self, labels: np.ndarray) -> dict[int, np.ndarray]:
        """Labeled indices per class, ascending. Classes with none are omitted."""
        idx = self.labeled_indices()
        out: dict[int, np.ndarray] = {}
        for c in np.unique(labels[idx]):
            out[int(c)] = idx[labels[idx] == c]
        return out


def bernoulli_split(ds: Dataset, p: float, seed: int) -> LabelSplit:
    """Mark each example as labeled independently with probability ``p``."""
    if not 0.0 <= p <= 1.0:
        raise DataError(f"label probability {p} outside [0, 1]")
    u = rngmod.stream(seed, rngmod.LABEL_SPLIT).random(ds.n)
    return LabelSplit(mask=u < p, seed=seed, p=p)


@dataclass(frozen=True)
class AugmentConfig:
    noise_std: float = 0.0
    mask_prob: float = 0.0
    scale_jitter: float = 0.0

    def __post_init__(self):
        if self.noise_std < 0 or self.scale_jitter < 0:
            raise DataError("noise_std and scale_jitter must be nonnegative")
        if not 0.0 <= self.mask_prob <= 1.0:
            raise DataError("mask_prob must lie in [0, 1]")


def augment_rows(x: np.ndarray, cfg: AugmentConfig, gen: np.random.Generator) -> np.ndarray:
    """Augment every row independently: scale jitter, then noise, then masking.

    Draw order per call is fixed (scale factors, noise, mask uniforms) and
    does not depend on ``cfg``, so a zero config consumes the same stream.
    """
    x = np.asarray(x, dtype=np.float64)
    m, d = x.shape
    u = gen.uniform(-1.0, 1.0, size=m)
    noise = gen.standard_normal((m, d))
    keep = gen.random((m, d)) >= cfg.mask_prob
    out = x * (1.0 + u * cfg.scale_jitter)[:, None]
    out = out + noise * cfg.noise_std
    return np.where(keep, out, 0.0)


def augment(x: np.ndarray, cfg: AugmentConfig, gen: np.random.Generator) -> np.ndarray:
    return augment_rows(np.asarray(x, dtype=np.float64)[None, :], cfg, gen)[0]


@dataclass
class UnsupervisedBatch:
    views: np.ndarray  # (2b, d_in); rows [0, b) first view, [b, 2b) second view
    partner: np.ndarray
    indices: np.ndarray


def pair_index(b: int) -> np.ndarray:
    return np.concatenate([np.arange(b, 2 * b), np.arange(0, b)])


def make_views(ds: Dataset, indices: np.ndarray, cfg: AugmentConfig, gen) -> UnsupervisedBatch:
    x = ds.features[indices]
    b = len(indices)
    views = augment_rows(np.concatenate([x, x]), cfg, gen)
    return UnsupervisedBatch(views, pair_index(b), np.asarray(indices))


def next_unsupervised_batch(
    ds: Dataset, batch_size: int, cfg: AugmentConfig, gen: np.random.Generator
) -> UnsupervisedBatch:
    """Sample ``batch_size`` distinct indices from the whole dataset, two views each."""
    if batch_size < 1:
        raise SamplingError("batch_size must be >= 1")
    if batch_size > ds.n:
        raise SamplingError(f"batch_size {batch_size} exceeds dataset size {ds.n}")
    idx = gen.choice(ds.n, size=batch_size, replace=False)
    return make_views(ds, idx, cfg, gen)


class UnsupervisedLoader:
    """Epoch-wise permutation sampler over every example, labeled or not.

    Each epoch is a fresh permutation split into ``ceil(n / batch_size)``
    near-equal batches, so every index is visited exactly once per epoch.
    Batch ``k`` of epoch ``e`` depends only on ``(seed, e, k)``.
    """

    def __init__(self, ds: Dataset, batch_size: int, cfg: AugmentConfig, seed: int):
        if batch_size < 1:
            raise SamplingError("batch_size must be >= 1")
        if batch_size > ds.n:
            raise SamplingError(f"batch_size {batch_size} exceeds dataset size {ds.n}")
        self.ds = ds
        self.batch_size = batch_size
        self.cfg = cfg
        self.seed = seed

    @property
    def steps_per_epoch(self) -> int:
        return math.ceil(self.ds.n / self.batch_size)

    def epoch_indices(self, epoch: int) -> list[np.ndarray]:
        perm = rngmod.stream(self.seed, rngmod.PERMUTATION, epoch).permutation(self.ds.n)
        return np.array_split(perm, self.steps_per_epoch)

    def epoch(self, epoch: int):
        for k, idx in enumerate(self.epoch_indices(epoch)):
            step = epoch * self.steps_per_epoch + k
            gen = rngmod.stream(self.seed, rngmod.UNSUP_AUGMENT, step)
            yield make_views(self.ds, idx, self.cfg, gen)


@dataclass(frozen=True)
class SupervisedBatchSpec:
    classes_per_batch: int
    samples_per_class: int

    def __post_init__(self):
        if self.classes_per_batch < 1:
            raise DataError("classes_per_batch must be >= 1")
        if self.samples_per_class < 2:
            raise DataError("samples_per_class must be >= 2")


def next_supervised_batch(
    ds: Dataset,
    split: LabelSplit,
    spec: SupervisedBatchSpec,
    cfg: AugmentConfig,
    gen: np.random.Generator,
    by_class: dict[int, np.ndarray] | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Class-balanced labeled batch of ``classes_per_batch * samples_per_class`` rows.

    Classes are drawn without replacement among those with labeled data.
    A class with fewer labeled images than ``samples_per_class`` contributes
    all of them plus re-draws with replacement; every row is augmented
    independently, so repeated images give distinct views.
    """
    if by_class is None:
        by_class = split.by_class(ds.labels)
    if not by_class:
        raise EmptySupervisionError("no class has a labeled example")
    eligible = np.array(sorted(by_class))
    if spec.classes_per_batch > len(eligible):
        raise EmptySupervisionError(
            f"need {spec.classes_per_batch} labeled classes, only {len(eligible)} available"
        )
    chosen = np.sort(gen.choice(eligible, size=spec.classes_per_batch, replace=False))
    rows = []
    for c in chosen:
        pool = by_class[int(c)]
        k = spec.samples_per_class
        if len(pool) >= k:
            rows.append(gen.choice(pool, size=k, replace=False))
        else:
            extra = gen.choice(pool, size=k - len(pool), replace=True)
            rows.append(np.concatenate([gen.permutation(pool), extra]))
    idx = np.concatenate(rows)
    x = augment_rows(ds.features[idx], cfg, gen)
    return x, ds.labels[idx].copy()


class SupervisedLoader:
    """Fresh class subsample on every call; call ``k`` depends only on ``(seed, k)``."""

    def __init__(self, ds: Dataset, split: LabelSplit, spec: SupervisedBatchSpec,
                 cfg: AugmentConfig, seed: int):
        self.ds = ds
        self.split = split
        self.spec = spec
        self.cfg = cfg
        self.seed = seed
        self.by_class = split.by_class(ds.labels)
        self.calls = 0

    def batch(self, index: int) -> tuple[np.ndarray, np.ndarray]:
        gen = rngmod.stream(self.seed, rngmod.SUP_BATCH, index)
        self.calls += 1
        return next_supervised_batch(self.ds, self.split, self.spec, self.cfg, gen, self.by_class)
