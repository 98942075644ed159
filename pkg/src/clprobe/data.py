"""Feature datasets, synthetic streams and class-incremental task splits.

Features are held as ``float64`` arrays but every value is representable in
``float32``: files store 32-bit floats and synthetic draws are rounded through
``float32`` so that writing and re-reading a set is lossless.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .errors import ConfigError, DataError, IngestionError, SamplingError

MAGIC = b"CLFB"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHIIQ")

PROTOCOLS = ("equal", "half-first")


class LabeledFeature(NamedTuple):
    feature: np.ndarray
    label: int


class Batch(NamedTuple):
    """A contiguous block of examples, ``features`` is (n, d) float64."""

    features: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return len(self.labels)


@dataclass(eq=False)
class LabeledFeatureSet:
    features: np.ndarray
    labels: np.ndarray
    label_mapping: dict[int, int] | None = None

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels)
        if features.ndim != 2:
            raise DataError(f"features must be 2-D, got shape {features.shape}")
        if labels.shape != (features.shape[0],):
            raise DataError(
                f"{labels.shape[0] if labels.ndim else 0} labels for {features.shape[0]} rows"
            )
        if labels.size and (labels.dtype.kind not in "iu" or labels.min() < 0):
            raise DataError("labels must be non-negative integers")
        bad = ~np.isfinite(features).all(axis=1)
        if bad.any():
            raise DataError(f"non-finite feature at row {int(np.argmax(bad))}")
        self.features = features
        self.labels = labels.astype(np.int64)

    @property
    def dimension(self) -> int:
        return self.features.shape[1]

    @property
    def label_universe(self) -> tuple[int, ...]:
        return tuple(int(c) for c in np.unique(self.labels))

    @property
    def examples(self) -> list[LabeledFeature]:
        return [LabeledFeature(f, int(y)) for f, y in zip(self.features, self.labels)]

    def __len__(self):
        return len(self.labels)

    def take(self, indices) -> Batch:
        indices = np.asarray(indices, dtype=np.intp)
        return Batch(self.features[indices], self.labels[indices])

    def as_batch(self) -> Batch:
        return Batch(self.features, self.labels)

    def restrict(self, label_set) -> LabeledFeatureSet:
        """Examples whose label lies in ``label_set``, original order kept."""
        mask = np.isin(self.labels, np.fromiter(label_set, dtype=np.int64))
        return LabeledFeatureSet(self.features[mask], self.labels[mask], self.label_mapping)


@dataclass(frozen=True)
class Task:
    labels: tuple[int, ...]
    train: LabeledFeatureSet
    test: LabeledFeatureSet


@dataclass
class TaskStream:
    tasks: list[Task]
    protocol: str
    class_order: tuple[int, ...] = ()

    def __post_init__(self):
        seen: set[int] = set()
        for k, task in enumerate(self.tasks):
            labels = set(task.labels)
            if labels & seen:
                raise DataError(f"task {k} repeats labels {sorted(labels & seen)}")
            seen |= labels
            for name, part in (("train", task.train), ("test", task.test)):
                stray = set(part.label_universe) - labels
                if stray:
                    raise DataError(f"task {k} {name} set has labels {sorted(stray)} outside its label set")
        if not self.class_order:
            self.class_order = tuple(c for task in self.tasks for c in task.labels)

    def __len__(self):
        return len(self.tasks)

    @property
    def label_sets(self) -> list[tuple[int, ...]]:
        return [task.labels for task in self.tasks]

    @property
    def class_count(self) -> int:
        return sum(len(task.labels) for task in self.tasks)

    @property
    def dimension(self) -> int:
        return self.tasks[0].train.dimension

    def seen_labels(self, t: int) -> tuple[int, ...]:
        """Labels of tasks ``0..t`` (zero-based, inclusive) in column order."""
        return tuple(c for task in self.tasks[: t + 1] for c in task.labels)

    def fingerprint(self) -> str:
        import hashlib

        digest = hashlib.sha256()
        for task in self.tasks:
            digest.update(np.asarray(task.labels, dtype="<i8").tobytes())
            for part in (task.train, task.test):
                digest.update(part.features.astype("<f8").tobytes())
                digest.update(part.labels.astype("<i8").tobytes())
        return digest.hexdigest()


@dataclass(frozen=True)
class SyntheticConfig:
    class_count: int = 100
    dimension: int = 64
    samples_per_class_train: int = 20
    samples_per_class_test: int = 20
    cluster_spread: float = 0.1
    seed: int = 0
    shared_offset: float = 0.0

    def __post_init__(self):
        for name in ("class_count", "dimension", "samples_per_class_train", "samples_per_class_test"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not self.cluster_spread >= 0:
            raise ConfigError("cluster_spread must be non-negative")
        if not self.shared_offset >= 0:
            raise ConfigError("shared_offset must be non-negative")


# ---------------------------------------------------------------------------
# file formats


def _remap(raw_labels: np.ndarray, label_mapping: dict[int, int] | None):
    if label_mapping is None:
        present = np.unique(raw_labels)
        label_mapping = {int(c): i for i, c in enumerate(present)}
    lookup = np.empty(raw_labels.shape, dtype=np.int64)
    for row, raw in enumerate(raw_labels.tolist()):
        try:
            lookup[row] = label_mapping[raw]
        except KeyError:
            raise IngestionError(f"label {raw} absent from the label mapping", row) from None
    return lookup, dict(label_mapping)


def _check_finite(features: np.ndarray):
    bad = ~np.isfinite(features).all(axis=1)
    if bad.any():
        raise IngestionError("non-finite feature value", int(np.argmax(bad)))


def _read_binary(raw: bytes):
    if len(raw) < _HEADER.size:
        raise IngestionError("truncated header")
    magic, version, class_count, dim, rows = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise IngestionError(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise IngestionError(f"unsupported format version {version}")
    if dim == 0:
        raise IngestionError("dimension must be positive")
    record = np.dtype([("label", "<u4"), ("x", "<f4", (dim,))])
    body = memoryview(raw)[_HEADER.size :]
    complete = len(body) // record.itemsize
    if complete < rows:
        raise IngestionError(f"file ends inside the record (expected {rows} rows of dimension {dim})", complete)
    if len(body) != rows * record.itemsize:
        raise IngestionError(
            f"{len(body) - rows * record.itemsize} trailing bytes after the last record "
            "(row width does not match the declared dimension)",
            rows,
        )
    table = np.frombuffer(body, dtype=record, count=rows)
    labels = table["label"].astype(np.int64)
    if class_count and labels.size and labels.max() >= class_count:
        raise IngestionError(
            f"label {int(labels.max())} not below declared class count {class_count}",
            int(np.argmax(labels >= class_count)),
        )
    return table["x"].astype(np.float64), labels


def _read_csv(path: Path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestionError("empty file") from None
        dim = len(header) - 1
        expected = ["label"] + [f"f{i}" for i in range(dim)]
        if dim < 1 or [h.strip() for h in header] != expected:
            raise IngestionError("header must be 'label,f0,...,f{d-1}'")
        labels, rows = [], []
        for index, row in enumerate(reader):
            if not row:
                continue
            if len(row) != dim + 1:
                raise IngestionError(f"{len(row) - 1} values, expected {dim}", index)
            try:
                label = int(row[0])
                values = [float(v) for v in row[1:]]
            except ValueError as exc:
                raise IngestionError(str(exc), index) from None
            if label < 0:
                raise IngestionError("negative label", index)
            labels.append(label)
            rows.append(values)
    features = np.asarray(rows, dtype=np.float32).reshape(len(rows), dim).astype(np.float64)
    return features, np.asarray(labels, dtype=np.int64)


def load_feature_dataset(path, label_mapping: dict[int, int] | None = None) -> LabeledFeatureSet:
    """Read a binary (``CLFB``) or CSV feature file.

    Labels are remapped onto ``0..C-1`` in ascending order of the raw ids.
    Pass the ``label_mapping`` of a companion file (e.g. the training split) to
    reuse it; a label outside that mapping is an ingestion error.
    """
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] == MAGIC:
        features, labels = _read_binary(raw)
    else:
        try:
            features, labels = _read_csv(path)
        except (csv.Error, UnicodeDecodeError) as exc:
            raise IngestionError(f"neither a CLFB file nor readable CSV ({exc})") from None
    _check_finite(features)
    labels, mapping = _remap(labels, label_mapping)
    return LabeledFeatureSet(features, labels, mapping)


def save_feature_dataset(path, dataset: LabeledFeatureSet, class_count: int | None = None, fmt: str = "binary"):
    path = Path(path)
    labels = dataset.labels
    if class_count is None:
        class_count = int(labels.max()) + 1 if labels.size else 0
    if fmt == "csv":
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["label"] + [f"f{i}" for i in range(dataset.dimension)])
            for y, row in zip(labels.tolist(), dataset.features.astype(np.float32)):
                writer.writerow([y] + [repr(float(v)) for v in row])
        return
    if fmt != "binary":
        raise ConfigError(f"unknown feature file format {fmt!r}")
    record = np.dtype([("label", "<u4"), ("x", "<f4", (dataset.dimension,))])
    table = np.empty(len(dataset), dtype=record)
    table["label"] = labels
    table["x"] = dataset.features
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, class_count, dataset.dimension, len(dataset)))
        fh.write(table.tobytes())


# ---------------------------------------------------------------------------
# task partitioning


def task_sizes(class_count: int, task_count: int, protocol: str) -> list[int]:
    """Number of classes in each task under ``protocol``."""
    if task_count < 1:
        raise ConfigError("task count must be >= 1")
    if protocol == "equal":
        if class_count % task_count:
            raise ConfigError(f"{class_count} classes cannot be split equally into {task_count} tasks")
        return [class_count // task_count] * task_count
    if protocol == "half-first":
        if class_count % 2:
            raise ConfigError(f"half-first protocol needs an even class count, got {class_count}")
        half = class_count // 2
        rest = task_count - 1
        if rest < 1 or half % rest:
            raise ConfigError(f"{half} remaining classes cannot be split equally into {rest} tasks")
        return [half] + [half // rest] * rest
    raise ConfigError(f"unknown protocol {protocol!r}; expected one of {PROTOCOLS}")


def _partition(order: Sequence[int], sizes: Sequence[int]) -> list[tuple[int, ...]]:
    out, start = [], 0
    for size in sizes:
        out.append(tuple(int(c) for c in order[start : start + size]))
        start += size
    return out


def split_into_tasks(
    train: LabeledFeatureSet,
    test: LabeledFeatureSet | None,
    task_count: int,
    protocol: str = "equal",
    seed: int = 0,
) -> TaskStream:
    """Assign classes to tasks by a seeded shuffle, then slice contiguously."""
    classes = np.asarray(train.label_universe, dtype=np.int64)
    sizes = task_sizes(len(classes), task_count, protocol)
    if test is None:
        test = LabeledFeatureSet(np.empty((0, train.dimension)), np.empty(0, dtype=np.int64))
    elif test.dimension != train.dimension:
        raise DataError(f"test dimension {test.dimension} != train dimension {train.dimension}")
    stray = set(test.label_universe) - set(classes.tolist())
    if stray:
        raise DataError(f"test labels {sorted(stray)} never occur in training data")
    order = np.random.default_rng(seed).permutation(classes)
    label_sets = _partition(order.tolist(), sizes)
    tasks = [Task(ls, train.restrict(ls), test.restrict(ls)) for ls in label_sets]
    return TaskStream(tasks, protocol, tuple(order.tolist()))


def unit_sphere(rng: np.random.Generator, count: int, dimension: int) -> np.ndarray:
    draws = rng.standard_normal((count, dimension))
    return draws / np.linalg.norm(draws, axis=1, keepdims=True)


def generate_synthetic_stream(cfg: SyntheticConfig, task_count: int, protocol: str = "equal") -> TaskStream:
    """Gaussian clusters around unit-norm class means.

    ``shared_offset`` > 0 adds one common vector of that norm to every feature
    (random direction), mimicking the large class-independent component of
    real backbone features; without it, new-class columns barely respond to
    old-class inputs and sequential training shows little interference.

    Classes are assigned to tasks in id order (the means are exchangeable, so
    no shuffle is needed).
    """
    sizes = task_sizes(cfg.class_count, task_count, protocol)
    rng = np.random.default_rng(cfg.seed)
    means = unit_sphere(rng, cfg.class_count, cfg.dimension)
    offset = cfg.shared_offset * unit_sphere(rng, 1, cfg.dimension)[0]

    def draw(per_class):
        noise = rng.standard_normal((cfg.class_count, per_class, cfg.dimension))
        points = means[:, None, :] + cfg.cluster_spread * noise + offset
        features = points.reshape(-1, cfg.dimension).astype(np.float32).astype(np.float64)
        labels = np.repeat(np.arange(cfg.class_count), per_class)
        return LabeledFeatureSet(features, labels)

    train = draw(cfg.samples_per_class_train)
    test = draw(cfg.samples_per_class_test)
    label_sets = _partition(range(cfg.class_count), sizes)
    tasks = [Task(ls, train.restrict(ls), test.restrict(ls)) for ls in label_sets]
    return TaskStream(tasks, protocol)


# ---------------------------------------------------------------------------
# batching


def iter_batches(dataset: LabeledFeatureSet, batch_size: int, rng: np.random.Generator) -> Iterator[Batch]:
    """One epoch: a seeded shuffle cut into consecutive batches, last one partial."""
    if len(dataset) == 0:
        raise SamplingError("cannot draw batches from an empty set")
    if batch_size < 1:
        raise ConfigError("batch size must be >= 1")
    order = rng.permutation(len(dataset))
    for start in range(0, len(order), batch_size):
        yield dataset.take(order[start : start + batch_size])


def steps_per_epoch(size: int, batch_size: int) -> int:
    return math.ceil(size / batch_size)


def sample_batch(dataset: LabeledFeatureSet, batch_size: int, rng: np.random.Generator) -> Batch:
    """First batch of a fresh epoch shuffle."""
    return next(iter_batches(dataset, batch_size, rng))
