"""Replay strategies and the per-task training loop.

The five variants differ along two switches only:

============  ==========  =========
variant       freeze_old  rebalance
============  ==========  =========
finetune      no          no        (no memory at all)
er            no          no
er-fix        yes         no
er-bal        no          yes
taer          yes         yes
============  ==========  =========
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np

from .classifier import (
    Classifier,
    GradientSlice,
    OptimizerConfig,
    expand_classifier,
    loss_and_grad_masked,
    sgd_step,
)
from .data import Batch, Task, TaskStream, iter_batches
from .errors import ClprobeError, ConfigError, StrategyError
from .memory import EpisodicMemory, sample_replay_batch, update_memory

VARIANTS = {
    "finetune": (False, False),
    "er": (False, False),
    "er-fix": (True, False),
    "er-bal": (False, True),
    "taer": (True, True),
}


@dataclass(frozen=True)
class StrategyConfig:
    variant: str = "taer"
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    memory_capacity: int = 200
    class_mean_init: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown strategy {self.variant!r}; expected one of {sorted(VARIANTS)}")
        if self.memory_capacity < 0:
            raise ConfigError("memory capacity must be >= 0")
        if self.uses_memory and self.memory_capacity == 0:
            raise ConfigError(f"strategy {self.variant!r} replays from memory but capacity is 0")

    @property
    def freeze_old(self) -> bool:
        return VARIANTS[self.variant][0]

    @property
    def rebalance(self) -> bool:
        return VARIANTS[self.variant][1]

    @property
    def uses_memory(self) -> bool:
        return self.variant != "finetune"

    def to_dict(self) -> dict:
        out = asdict(self)
        out.update(freeze_old=self.freeze_old, rebalance=self.rebalance)
        return out


@dataclass
class PhaseState:
    """Training state at task ``t`` (1-based; 0 before the first task).

    ``current_labels`` is Y_t; ``seen_labels`` is Y_{1:t} in column order.
    """

    classifier: Classifier
    memory: EpisodicMemory
    t: int = 0
    seen_labels: tuple[int, ...] = ()
    current_labels: tuple[int, ...] = ()

    @classmethod
    def initial(cls, dimension: int, config: StrategyConfig) -> PhaseState:
        capacity = config.memory_capacity if config.uses_memory else 0
        return cls(Classifier.empty(dimension), EpisodicMemory(capacity, dimension))

    @property
    def old_labels(self) -> tuple[int, ...]:
        return self.seen_labels[: len(self.seen_labels) - len(self.current_labels)]


@dataclass
class PhaseSnapshot:
    """State right after training task ``t`` (1-based), before the memory update.

    ``replay_memory`` is the memory the phase replayed from, ``memory`` the
    one carried into the next phase.
    """

    t: int
    classifier: Classifier
    replay_memory: EpisodicMemory
    memory: EpisodicMemory
    seen_labels: tuple[int, ...]
    mean_loss: float
    steps: int


@dataclass
class SequenceResult:
    final: PhaseState
    phases: list[PhaseSnapshot]


class TrainingStreams:
    """Independent generators for current-task shuffles, replay draws and memory updates.

    Keeping them separate means every variant sees the same current-task
    batches and, if it replays, the same replay draws, whatever the others do.
    """

    def __init__(self, seed: int):
        shuffle, replay, memory = np.random.SeedSequence(seed).spawn(3)
        self.shuffle = np.random.default_rng(shuffle)
        self.replay = np.random.default_rng(replay)
        self.memory = np.random.default_rng(memory)


def compute_lambda(old_class_count: int, total_class_count: int) -> float:
    """Replay weight: fraction of seen classes that belong to earlier tasks."""
    return float(lambda_fraction(old_class_count, total_class_count))


def lambda_fraction(old_class_count: int, total_class_count: int) -> Fraction:
    if total_class_count <= 0:
        raise ConfigError("total class count must be positive")
    if not 0 <= old_class_count <= total_class_count:
        raise ConfigError(f"old class count {old_class_count} outside 0..{total_class_count}")
    return Fraction(old_class_count, total_class_count)


def phase_loss(
    state: PhaseState,
    current_batch: Batch,
    replay_batch: Batch | None,
    config: StrategyConfig,
) -> GradientSlice:
    """Combined objective on one current batch and one replay batch.

    The state's classifier must already carry the current task's columns and
    the variant's frozen boundary.
    """
    replaying = config.uses_memory and state.t > 1
    if replaying and replay_batch is None:
        raise StrategyError(f"{config.variant} needs a replay batch at task {state.t}")
    if not replaying:
        if replay_batch is not None:
            raise StrategyError(f"{config.variant} takes no replay batch at task {state.t}")
        return loss_and_grad_masked(state.classifier, current_batch, 1.0)
    if config.rebalance:
        lam = compute_lambda(len(state.old_labels), len(state.seen_labels))
        w_current, w_replay = 1.0 - lam, lam
    else:
        w_current, w_replay = 1.0, 1.0
    cur = loss_and_grad_masked(state.classifier, current_batch, w_current)
    rep = loss_and_grad_masked(state.classifier, replay_batch, w_replay)
    return GradientSlice(cur.columns + rep.columns, cur.loss_value + rep.loss_value)


def train_task(
    state: PhaseState,
    task: Task,
    config: StrategyConfig,
    streams: TrainingStreams,
    on_batch: Callable[[Batch, Batch | None], None] | None = None,
) -> tuple[PhaseState, PhaseSnapshot]:
    """Expand, train for ``epochs`` passes over the task, then refresh memory.

    Each step pairs a current-task batch with a replay batch of the same size.
    ``on_batch`` sees every (current, replay) pair, for instrumentation.
    """
    overlap = set(task.labels) & set(state.seen_labels)
    if overlap:
        raise ConfigError(f"task labels {sorted(overlap)} were already seen")
    t = state.t + 1
    classifier = expand_classifier(
        state.classifier,
        task.labels,
        init="class-mean" if config.class_mean_init else "zeros",
        train=task.train,
        freeze_old=config.freeze_old,
    )
    phase = PhaseState(classifier, state.memory, t, state.seen_labels + tuple(task.labels), tuple(task.labels))
    replaying = config.uses_memory and t > 1
    opt = config.optimizer
    losses = []
    for _ in range(opt.epochs):
        for current in iter_batches(task.train, opt.batch_size, streams.shuffle):
            replay = sample_replay_batch(phase.memory, len(current), streams.replay) if replaying else None
            if on_batch is not None:
                on_batch(current, replay)
            step = phase_loss(phase, current, replay, config)
            phase.classifier = sgd_step(phase.classifier, step, opt.learning_rate)
            losses.append(step.loss_value)
    replay_memory = phase.memory
    if config.uses_memory:
        phase.memory = update_memory(phase.memory, task.train, streams.memory)
    snapshot = PhaseSnapshot(
        t,
        phase.classifier.copy(),
        replay_memory,
        phase.memory,
        phase.seen_labels,
        float(np.mean(losses)),
        len(losses),
    )
    return phase, snapshot


def run_sequence(
    stream: TaskStream,
    config: StrategyConfig,
    seed: int,
    on_batch: Callable[[Batch, Batch | None], None] | None = None,
) -> SequenceResult:
    if len(stream) == 0:
        raise ConfigError("task stream is empty")
    streams = TrainingStreams(seed)
    state = PhaseState.initial(stream.dimension, config)
    phases = []
    for task in stream.tasks:
        try:
            state, snapshot = train_task(state, task, config, streams, on_batch)
        except ClprobeError as exc:
            raise exc.with_context(f"phase {state.t + 1}") from None
        phases.append(snapshot)
    return SequenceResult(state, phases)
