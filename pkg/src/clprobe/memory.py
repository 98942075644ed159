"""Class-balanced episodic memory for replay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Batch, LabeledFeatureSet, load_feature_dataset, save_feature_dataset
from .errors import ConfigError, LabelError, ReplayError


def class_quotas(capacity: int, classes) -> dict[int, int]:
    """Even split of ``capacity``; the remainder goes to the lowest class ids."""
    classes = sorted(int(c) for c in classes)
    if not classes:
        return {}
    base, extra = divmod(capacity, len(classes))
    return {c: base + (1 if i < extra else 0) for i, c in enumerate(classes)}


@dataclass
class EpisodicMemory:
    capacity: int
    dimension: int
    _slots: dict[int, np.ndarray] = field(default_factory=dict, repr=False)
    _cached: LabeledFeatureSet | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.capacity < 0:
            raise ConfigError("memory capacity must be >= 0")

    @property
    def enabled(self) -> bool:
        return self.capacity > 0

    @property
    def per_class_counts(self) -> dict[int, int]:
        return {c: len(rows) for c, rows in sorted(self._slots.items())}

    @property
    def classes(self) -> tuple[int, ...]:
        return tuple(sorted(self._slots))

    def __len__(self):
        return sum(len(rows) for rows in self._slots.values())

    def as_set(self) -> LabeledFeatureSet:
        """Stored examples, grouped by ascending class id."""
        if self._cached is None:
            classes = self.classes
            if classes:
                features = np.vstack([self._slots[c] for c in classes])
            else:
                features = np.empty((0, self.dimension))
            counts = [len(self._slots[c]) for c in classes]
            labels = np.repeat(np.asarray(classes, dtype=np.int64), counts)
            self._cached = LabeledFeatureSet(features, labels)
        return self._cached

    def copy(self) -> EpisodicMemory:
        return EpisodicMemory(self.capacity, self.dimension, {c: rows.copy() for c, rows in self._slots.items()})

    def save(self, path):
        save_feature_dataset(path, self.as_set())

    @classmethod
    def load(cls, path, capacity: int) -> EpisodicMemory:
        stored = load_feature_dataset(path)
        inverse = {v: k for k, v in stored.label_mapping.items()}
        memory = cls(capacity, stored.dimension)
        for c in stored.label_universe:
            memory._slots[inverse[c]] = stored.features[stored.labels == c]
        return memory


def update_memory(
    memory: EpisodicMemory,
    task_train: LabeledFeatureSet,
    rng: np.random.Generator,
) -> EpisodicMemory:
    """Greedy balancing at a task boundary.

    Every seen class (old and new) gets an equal quota. Old classes above quota
    lose random slots; each new class is filled with a random subset of its
    training examples, or all of them if it has fewer than its quota.
    """
    if not memory.enabled:
        raise ReplayError("memory capacity is 0; replay is disabled")
    if task_train.dimension != memory.dimension:
        raise ConfigError(f"task dimension {task_train.dimension} != memory dimension {memory.dimension}")
    new_classes = task_train.label_universe
    overlap = set(new_classes) & set(memory.classes)
    if overlap:
        raise LabelError(f"labels {sorted(overlap)} are already in memory")
    quotas = class_quotas(memory.capacity, set(memory.classes) | set(new_classes))
    updated = memory.copy()
    for c in memory.classes:
        rows = updated._slots[c]
        if len(rows) > quotas[c]:
            keep = np.sort(rng.choice(len(rows), size=quotas[c], replace=False))
            rows = rows[keep]
        if len(rows):
            updated._slots[c] = rows
        else:
            del updated._slots[c]
    for c in new_classes:
        pool = task_train.features[task_train.labels == c]
        take = min(quotas[c], len(pool))
        if take:
            updated._slots[c] = pool[np.sort(rng.choice(len(pool), size=take, replace=False))]
    return updated


def sample_replay_batch(memory: EpisodicMemory, batch_size: int, rng: np.random.Generator) -> Batch:
    """Uniform draw over slots; with replacement only if the batch exceeds |M|."""
    size = len(memory)
    if size == 0:
        raise ReplayError("cannot replay from an empty memory")
    stored = memory.as_set()
    indices = rng.choice(size, size=batch_size, replace=batch_size > size)
    return stored.take(indices)
