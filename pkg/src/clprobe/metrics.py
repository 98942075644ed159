"""Evaluation: per-task and pooled accuracy, preserved accuracy, confusion
matrices and the old-task probability mass indicator."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .classifier import Classifier, logits, predict
from .data import LabeledFeatureSet, TaskStream
from .errors import MetricError
from .strategies import SequenceResult


def _require(dataset: LabeledFeatureSet, what: str):
    if len(dataset) == 0:
        raise MetricError(f"{what}: empty test set")


def task_accuracy(classifier: Classifier, test_set: LabeledFeatureSet, label_set: Sequence[int]) -> float:
    _require(test_set, "task_accuracy")
    return float(np.mean(predict(classifier, test_set.features, label_set) == test_set.labels))


def average_accuracy(per_task: Sequence[float]) -> float:
    if len(per_task) == 0:
        raise MetricError("average_accuracy of an empty list")
    return float(sum(per_task) / len(per_task))


def average_incremental_accuracy(alphas: Sequence[float]) -> float:
    if len(alphas) == 0:
        raise MetricError("average_incremental_accuracy of an empty list")
    return float(sum(alphas) / len(alphas))


def preserved_accuracy(classifier: Classifier, test_set: LabeledFeatureSet, labels_through_t: Sequence[int]) -> float:
    """Accuracy on task t's test set when only Y_{1:t} may be predicted."""
    return task_accuracy(classifier, test_set, labels_through_t)


def pooled(test_sets: Sequence[LabeledFeatureSet]) -> LabeledFeatureSet:
    return LabeledFeatureSet(
        np.vstack([s.features for s in test_sets]),
        np.concatenate([s.labels for s in test_sets]),
    )


@dataclass
class ConfusionMatrix:
    """Row = ground truth, column = prediction, both indexed by ``labels``."""

    counts: np.ndarray
    labels: tuple[int, ...]

    @property
    def ratios(self) -> np.ndarray:
        rows = self.counts.sum(axis=1, keepdims=True)
        return np.divide(self.counts, rows, out=np.zeros(self.counts.shape), where=rows > 0)

    def mass_into(self, true_labels: Sequence[int], predicted_labels: Sequence[int]) -> float:
        """Fraction of examples of ``true_labels`` predicted as one of ``predicted_labels``."""
        rows = [self.labels.index(c) for c in true_labels]
        cols = [self.labels.index(c) for c in predicted_labels]
        total = self.counts[rows].sum()
        if total == 0:
            raise MetricError("no examples for the requested ground-truth labels")
        return float(self.counts[np.ix_(rows, cols)].sum() / total)

    def to_csv(self, normalized: bool = False) -> str:
        values = self.ratios if normalized else self.counts
        lines = ["true\\pred," + ",".join(str(c) for c in self.labels)]
        for c, row in zip(self.labels, values):
            cells = (repr(float(v)) for v in row) if normalized else (str(int(v)) for v in row)
            lines.append(f"{c}," + ",".join(cells))
        return "\n".join(lines) + "\n"


def confusion_matrix(
    classifier: Classifier,
    test_sets: Sequence[LabeledFeatureSet],
    labels: Sequence[int] | None = None,
) -> ConfusionMatrix:
    labels = tuple(sorted(classifier.label_order if labels is None else labels))
    data = pooled(test_sets)
    index = {c: i for i, c in enumerate(labels)}
    counts = np.zeros((len(labels), len(labels)), dtype=np.int64)
    if len(data):
        predicted = predict(classifier, data.features, labels)
        np.add.at(counts, ([index[int(y)] for y in data.labels], [index[int(p)] for p in predicted]), 1)
    return ConfusionMatrix(counts, labels)


def old_task_probability_mass(
    classifier: Classifier,
    samples: LabeledFeatureSet,
    old_labels: Sequence[int],
    all_labels: Sequence[int],
) -> float:
    """Mean softmax mass on old-class columns, over old-class samples only."""
    if len(samples) == 0:
        raise MetricError("old_task_probability_mass: empty sample set")
    old = set(int(c) for c in old_labels)
    stray = set(samples.label_universe) - old
    if stray:
        raise MetricError(f"samples with labels {sorted(stray)} are not from old tasks")
    z = logits(classifier, samples.features, list(all_labels))
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    mask = np.isin(np.asarray(all_labels), list(old))
    return float(np.mean(e[:, mask].sum(axis=1) / e.sum(axis=1)))


@dataclass
class PhaseMetrics:
    """Metrics after training phase ``t`` (1-based).

    ``per_task_accuracy[k]`` is task k+1 evaluated over all labels seen so far;
    ``preserved_accuracy[k]`` restricts predictions to the labels seen up to
    task k+1.
    """

    t: int
    per_task_accuracy: list[float]
    incremental_accuracy: float
    preserved_accuracy: list[float]
    indicator_test: float | None = None
    indicator_memory: float | None = None
    memory_counts: dict[int, int] = field(default_factory=dict)
    mean_loss: float = 0.0

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "per_task_accuracy": self.per_task_accuracy,
            "incremental_accuracy": self.incremental_accuracy,
            "preserved_accuracy": self.preserved_accuracy,
            "indicator_test": self.indicator_test,
            "indicator_memory": self.indicator_memory,
            "memory_counts": {str(c): n for c, n in sorted(self.memory_counts.items())},
            "mean_loss": self.mean_loss,
        }


def phase_metrics(stream: TaskStream, snapshot) -> PhaseMetrics:
    t = snapshot.t
    clf = snapshot.classifier
    seen = stream.seen_labels(t - 1)
    tests = [task.test for task in stream.tasks[:t]]
    per_task = [task_accuracy(clf, s, seen) for s in tests]
    alpha = task_accuracy(clf, pooled(tests), seen)
    preserved = [preserved_accuracy(clf, s, stream.seen_labels(k)) for k, s in enumerate(tests)]
    metrics = PhaseMetrics(t, per_task, alpha, preserved, mean_loss=snapshot.mean_loss)
    if t > 1:
        old = stream.seen_labels(t - 2)
        metrics.indicator_test = old_task_probability_mass(clf, pooled(tests[:-1]), old, seen)
        memory = snapshot.replay_memory.as_set()
        if len(memory):
            metrics.indicator_memory = old_task_probability_mass(clf, memory, old, seen)
    metrics.memory_counts = snapshot.memory.per_class_counts
    return metrics


@dataclass
class RunMetrics:
    seed: int
    phases: list[PhaseMetrics]
    average_accuracy: float
    average_incremental_accuracy: float
    preserved_accuracy: list[float]
    prediction_bias: float | None
    confusion: ConfusionMatrix

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "average_accuracy": self.average_accuracy,
            "average_incremental_accuracy": self.average_incremental_accuracy,
            "preserved_accuracy": self.preserved_accuracy,
            "prediction_bias": self.prediction_bias,
            "phases": [p.to_dict() for p in self.phases],
            "confusion_counts": self.confusion.counts.tolist(),
        }


def evaluate_sequence(stream: TaskStream, result: SequenceResult, seed: int) -> RunMetrics:
    """All reported quantities for one trained sequence.

    ``prediction_bias`` is the fraction of old-class test examples predicted
    as one of the final task's labels (``None`` for a single task).
    """
    phases = [phase_metrics(stream, snap) for snap in result.phases]
    final = phases[-1]
    clf = result.phases[-1].classifier
    confusion = confusion_matrix(clf, [task.test for task in stream.tasks], stream.seen_labels(len(stream) - 1))
    bias = None
    if len(stream) > 1:
        bias = confusion.mass_into(stream.seen_labels(len(stream) - 2), stream.tasks[-1].labels)
    return RunMetrics(
        seed,
        phases,
        average_accuracy(final.per_task_accuracy),
        average_incremental_accuracy([p.incremental_accuracy for p in phases]),
        final.preserved_accuracy,
        bias,
        confusion,
    )
