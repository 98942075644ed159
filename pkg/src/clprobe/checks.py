"""Runtime invariant checks used by ``--self-check`` and ``clprobe selfcheck``.

Each check returns a list of human-readable failures; empty means pass.
"""

from __future__ import annotations

import numpy as np

from .classifier import Classifier, cross_entropy_and_grad, logits, softmax
from .data import Batch, TaskStream
from .metrics import RunMetrics
from .strategies import SequenceResult, StrategyConfig


def frozen_columns_unchanged(result: SequenceResult) -> list[str]:
    """Columns frozen at phase t keep their bytes in every later snapshot."""
    failures = []
    phases = result.phases
    for i, snap in enumerate(phases):
        k = snap.classifier.frozen_boundary
        if k == 0:
            continue
        reference = phases[i - 1].classifier.column_bytes(k) if i else None
        if reference is not None and snap.classifier.column_bytes(k) != reference:
            failures.append(f"phase {snap.t}: frozen columns 0..{k - 1} changed during training")
    return failures


def memory_balanced(result: SequenceResult, capacity: int) -> list[str]:
    failures = []
    for snap in result.phases:
        counts = snap.memory.per_class_counts
        if not counts:
            continue
        total = sum(counts.values())
        if total > capacity:
            failures.append(f"phase {snap.t}: memory holds {total} > capacity {capacity}")
        spread = max(counts.values()) - min(counts.values())
        if spread > 1 and total >= len(snap.seen_labels):
            failures.append(f"phase {snap.t}: per-class counts spread {spread} > 1")
    return failures


def metrics_consistent(stream: TaskStream, run: RunMetrics) -> list[str]:
    failures = []
    if len(run.phases) != len(stream):
        failures.append(f"{len(run.phases)} phases for {len(stream)} tasks")
    values = [run.average_accuracy, run.average_incremental_accuracy, *run.preserved_accuracy]
    for phase in run.phases:
        values += [*phase.per_task_accuracy, phase.incremental_accuracy]
        values += [v for v in (phase.indicator_test, phase.indicator_memory) if v is not None]
    if any(not 0.0 <= v <= 1.0 for v in values):
        failures.append("a metric lies outside [0, 1]")
    final = run.phases[-1]
    if run.average_accuracy != sum(final.per_task_accuracy) / len(final.per_task_accuracy):
        failures.append("average accuracy is not the mean of the final per-task accuracies")
    counts = run.confusion.counts
    expected = {c: 0 for c in run.confusion.labels}
    for task in stream.tasks:
        for c in task.test.labels.tolist():
            expected[c] += 1
    if counts.sum(axis=1).tolist() != [expected[c] for c in run.confusion.labels]:
        failures.append("confusion matrix row sums differ from per-class test counts")
    return failures


def restricted_predictions_unchanged(stream: TaskStream, result: SequenceResult, probes: np.ndarray) -> list[str]:
    """Softmax over already-frozen columns must not move across a phase."""
    failures = []
    for prev, snap in zip(result.phases, result.phases[1:]):
        old = stream.seen_labels(prev.t - 1)
        if snap.classifier.frozen_boundary < len(old):
            continue
        before = softmax(logits(prev.classifier, probes, old))
        after = softmax(logits(snap.classifier, probes, old))
        if before.tobytes() != after.tobytes():
            failures.append(f"phase {snap.t}: restricted softmax over old classes changed")
    return failures


def gradient_matches_finite_differences(
    classifier: Classifier, batch: Batch, step: float = 1e-5, tolerance: float = 1e-4
) -> list[str]:
    _, analytic = cross_entropy_and_grad(classifier, batch)
    w = classifier.weights
    numeric = np.zeros_like(w)
    probe = classifier.copy()
    for idx in np.ndindex(*w.shape):
        probe.weights[idx] = w[idx] + step
        up, _ = cross_entropy_and_grad(probe, batch)
        probe.weights[idx] = w[idx] - step
        down, _ = cross_entropy_and_grad(probe, batch)
        probe.weights[idx] = w[idx]
        numeric[idx] = (up - down) / (2 * step)
    k = classifier.frozen_boundary
    err = np.abs(analytic[:, k:] - numeric[:, k:]) / np.maximum(1e-8, np.abs(analytic[:, k:]) + np.abs(numeric[:, k:]))
    if err.size and err.max() >= tolerance:
        return [f"gradient relative error {err.max():.2e} >= {tolerance:g}"]
    return []


def check_run(stream: TaskStream, result: SequenceResult, run: RunMetrics, config: StrategyConfig) -> list[str]:
    failures = frozen_columns_unchanged(result) + metrics_consistent(stream, run)
    if config.uses_memory:
        failures += memory_balanced(result, config.memory_capacity)
    if config.freeze_old:
        probes = np.vstack([task.test.features[:10] for task in stream.tasks])
        failures += restricted_predictions_unchanged(stream, result, probes)
    return failures
