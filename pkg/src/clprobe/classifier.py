"""One-layer softmax classifier with a frozen leading block of columns.

Column ``i`` of ``weights`` scores class ``label_order[i]``. Columns left of
``frozen_boundary`` still take part in every softmax but are never written by
:func:`sgd_step`.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .data import Batch, LabeledFeatureSet
from .errors import ConfigError, DataError, LabelError, NumericError, ShapeError

CHECKPOINT_MAGIC = b"CLCK"
CHECKPOINT_VERSION = 1
_CKPT_HEADER = struct.Struct("<4sHIII")

INIT_MODES = ("zeros", "class-mean")


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 0.1
    batch_size: int = 32
    epochs: int = 1

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be >= 1")


class GradientSlice(NamedTuple):
    """Gradient for the trainable columns only, aligned left-to-right."""

    columns: np.ndarray
    loss_value: float


@dataclass(eq=False)
class Classifier:
    weights: np.ndarray
    label_order: tuple[int, ...] = ()
    frozen_boundary: int = 0
    _index: dict[int, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.label_order = tuple(int(c) for c in self.label_order)
        if self.weights.ndim != 2 or self.weights.shape[1] != len(self.label_order):
            raise ShapeError(
                f"weights of shape {self.weights.shape} do not match {len(self.label_order)} labels"
            )
        if len(set(self.label_order)) != len(self.label_order):
            raise LabelError("label_order contains duplicates")
        if not 0 <= self.frozen_boundary <= len(self.label_order):
            raise ShapeError(f"frozen_boundary {self.frozen_boundary} outside 0..{len(self.label_order)}")
        self._index = {c: i for i, c in enumerate(self.label_order)}

    @classmethod
    def empty(cls, dimension: int) -> Classifier:
        return cls(np.zeros((dimension, 0)), ())

    @property
    def dimension(self) -> int:
        return self.weights.shape[0]

    @property
    def column_count(self) -> int:
        return self.weights.shape[1]

    @property
    def trainable_shape(self) -> tuple[int, int]:
        return (self.dimension, self.column_count - self.frozen_boundary)

    def columns_for(self, labels: Sequence[int]) -> np.ndarray:
        try:
            return np.fromiter((self._index[int(c)] for c in labels), dtype=np.intp, count=len(labels))
        except KeyError as exc:
            raise LabelError(f"label {exc.args[0]} has no classifier column") from None

    def copy(self) -> Classifier:
        return Classifier(self.weights.copy(), self.label_order, self.frozen_boundary)

    def to_bytes(self) -> bytes:
        """Checkpoint: header, label order as u32, then column-major float64."""
        header = _CKPT_HEADER.pack(
            CHECKPOINT_MAGIC, CHECKPOINT_VERSION, self.dimension, self.column_count, self.frozen_boundary
        )
        labels = np.asarray(self.label_order, dtype="<u4").tobytes()
        return header + labels + self.weights.astype("<f8").tobytes(order="F")

    @classmethod
    def from_bytes(cls, raw: bytes) -> Classifier:
        magic, version, dim, cols, frozen = _CKPT_HEADER.unpack_from(raw)
        if magic != CHECKPOINT_MAGIC or version != CHECKPOINT_VERSION:
            raise DataError("not a classifier checkpoint")
        offset = _CKPT_HEADER.size
        labels = np.frombuffer(raw, dtype="<u4", count=cols, offset=offset)
        offset += 4 * cols
        if len(raw) != offset + 8 * dim * cols:
            raise DataError("checkpoint size does not match its header")
        weights = np.frombuffer(raw, dtype="<f8", count=dim * cols, offset=offset).reshape((dim, cols), order="F")
        return cls(weights.astype(np.float64), tuple(labels.tolist()), frozen)

    def column_bytes(self, stop: int) -> bytes:
        """Raw bytes of the first ``stop`` columns, for bit-exactness checks."""
        return self.weights[:, :stop].astype("<f8").tobytes(order="F")


def softmax(logits) -> np.ndarray:
    """Row-wise softmax with max subtraction."""
    z = np.asarray(logits, dtype=np.float64)
    if not np.isfinite(z).all():
        raise NumericError("softmax input contains non-finite values")
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _as_features(classifier: Classifier, features) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.shape[-1] != classifier.dimension:
        raise ShapeError(f"feature dimension {x.shape[-1]} != classifier dimension {classifier.dimension}")
    return x


def logits(classifier: Classifier, features, column_subset: Sequence[int] | None = None) -> np.ndarray:
    """Scores ``w_i . h(x)``; a single vector or a (n, d) block of features."""
    x = _as_features(classifier, features)
    if column_subset is None:
        return x @ classifier.weights
    return x @ classifier.weights[:, classifier.columns_for(column_subset)]


def _label_columns(classifier: Classifier, labels: np.ndarray) -> np.ndarray:
    try:
        return np.fromiter((classifier._index[int(y)] for y in labels), dtype=np.intp, count=len(labels))
    except KeyError as exc:
        raise LabelError(f"label {exc.args[0]} is not among the classifier's labels") from None


def cross_entropy_and_grad(classifier: Classifier, batch: Batch) -> tuple[float, np.ndarray]:
    """Batch-mean cross entropy over all columns and its full (d, K) gradient."""
    features, labels = batch
    if len(labels) == 0:
        raise DataError("empty batch")
    x = _as_features(classifier, features)
    cols = _label_columns(classifier, labels)
    z = x @ classifier.weights
    logp = log_softmax(z)
    rows = np.arange(len(cols))
    loss = -logp[rows, cols].mean()
    residual = np.exp(logp)
    residual[rows, cols] -= 1.0
    return float(loss), x.T @ residual / len(cols)


def loss_and_grad_masked(classifier: Classifier, batch: Batch, weight_on_batch: float = 1.0) -> GradientSlice:
    """Weighted mean cross entropy; gradient kept for unfrozen columns only."""
    loss, grad = cross_entropy_and_grad(classifier, batch)
    k = classifier.frozen_boundary
    return GradientSlice(weight_on_batch * grad[:, k:], weight_on_batch * loss)


def sgd_step(classifier: Classifier, gradient: GradientSlice, lr: float) -> Classifier:
    columns = np.asarray(gradient.columns, dtype=np.float64)
    if columns.shape != classifier.trainable_shape:
        raise ShapeError(f"gradient shape {columns.shape} != trainable shape {classifier.trainable_shape}")
    updated = classifier.copy()
    k = classifier.frozen_boundary
    updated.weights[:, k:] = classifier.weights[:, k:] - lr * columns
    return updated


def class_means(train: LabeledFeatureSet, labels: Sequence[int]) -> np.ndarray:
    """(d, len(labels)) matrix of per-class training feature means."""
    out = np.zeros((train.dimension, len(labels)))
    for j, c in enumerate(labels):
        rows = train.features[train.labels == c]
        if len(rows) == 0:
            raise LabelError(f"class {c} has no training examples for class-mean init")
        out[:, j] = rows.mean(axis=0)
    return out


def expand_classifier(
    classifier: Classifier,
    new_labels: Sequence[int],
    init: str = "zeros",
    train: LabeledFeatureSet | None = None,
    freeze_old: bool = False,
) -> Classifier:
    """Append one column per new label.

    With ``freeze_old`` every existing column becomes frozen; otherwise the
    boundary is carried over unchanged.
    """
    new_labels = tuple(int(c) for c in new_labels)
    clash = set(new_labels) & set(classifier.label_order)
    if clash or len(set(new_labels)) != len(new_labels):
        raise LabelError(f"duplicate labels on expansion: {sorted(clash) or list(new_labels)}")
    if init == "zeros":
        block = np.zeros((classifier.dimension, len(new_labels)))
    elif init == "class-mean":
        if train is None:
            raise ConfigError("class-mean init needs the task's training set")
        block = class_means(train, new_labels)
    else:
        raise ConfigError(f"unknown init mode {init!r}; expected one of {INIT_MODES}")
    boundary = classifier.column_count if freeze_old else classifier.frozen_boundary
    return Classifier(
        np.hstack([classifier.weights, block]),
        classifier.label_order + new_labels,
        boundary,
    )


def predict(classifier: Classifier, features, label_subset: Sequence[int] | None = None):
    """Argmax label over ``label_subset`` (default: all columns).

    Ties go to the lowest class id. Returns an int for a single feature vector
    and an int64 array for a (n, d) block.
    """
    candidates = sorted(classifier.label_order if label_subset is None else (int(c) for c in label_subset))
    scores = logits(classifier, features, candidates)
    picked = np.asarray(candidates, dtype=np.int64)[np.argmax(scores, axis=-1)]
    return int(picked) if np.ndim(picked) == 0 else picked
