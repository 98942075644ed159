"""Seeded multi-run experiments, sweeps and report serialization.

Seeds: the task stream is built from ``base_seed`` alone so every strategy
and every run sees the same data; run ``i`` trains with ``base_seed + i``.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from . import __version__
from .checks import check_run
from .classifier import OptimizerConfig
from .data import (
    FORMAT_VERSION,
    SyntheticConfig,
    TaskStream,
    generate_synthetic_stream,
    load_feature_dataset,
    split_into_tasks,
)
from .errors import ClprobeError, ConfigError, InvariantError
from .metrics import RunMetrics, evaluate_sequence
from .strategies import StrategyConfig, run_sequence

log = logging.getLogger(__name__)

REPORT_VERSION = 1

# Synthetic benchmark used by the acceptance suite: joint training on it lands
# in the 0.90-0.98 band and the five strategies separate clearly.
STANDARD_SYNTHETIC = SyntheticConfig(
    class_count=100,
    dimension=64,
    samples_per_class_train=20,
    samples_per_class_test=20,
    cluster_spread=0.2,
    shared_offset=2.0,
)
STANDARD_OPTIMIZER = OptimizerConfig(learning_rate=2.0, batch_size=32, epochs=100)
STANDARD_TASKS = 10


@dataclass(frozen=True)
class ExperimentConfig:
    strategy: StrategyConfig = field(default_factory=StrategyConfig)
    synthetic: SyntheticConfig | None = field(default_factory=lambda: STANDARD_SYNTHETIC)
    train_features: str | None = None
    test_features: str | None = None
    task_count: int = STANDARD_TASKS
    protocol: str = "equal"
    run_count: int = 3
    base_seed: int = 0
    self_check: bool = False
    timing: bool = False

    def __post_init__(self):
        if self.run_count < 1:
            raise ConfigError("run count must be >= 1")
        if (self.synthetic is None) == (self.train_features is None):
            raise ConfigError("give exactly one data source: synthetic config or training feature file")

    def to_dict(self) -> dict:
        out = {
            "strategy": self.strategy.to_dict(),
            "synthetic": asdict(self.synthetic) if self.synthetic else None,
            "train_features": self.train_features,
            "test_features": self.test_features,
            "task_count": self.task_count,
            "protocol": self.protocol,
            "run_count": self.run_count,
            "base_seed": self.base_seed,
        }
        if out["synthetic"]:
            out["synthetic"]["seed"] = self.base_seed
        return out


def standard_config(variant: str, run_count: int = 3, base_seed: int = 0) -> ExperimentConfig:
    """The standard benchmark: 100 classes in 10 tasks, memory 200, class-mean init."""
    strategy = StrategyConfig(variant, STANDARD_OPTIMIZER, 200, class_mean_init=True)
    return ExperimentConfig(strategy, STANDARD_SYNTHETIC, task_count=STANDARD_TASKS, run_count=run_count, base_seed=base_seed)


def build_stream(config: ExperimentConfig) -> TaskStream:
    if config.synthetic is not None:
        cfg = replace(config.synthetic, seed=config.base_seed)
        return generate_synthetic_stream(cfg, config.task_count, config.protocol)
    train = load_feature_dataset(config.train_features)
    test = None
    if config.test_features:
        test = load_feature_dataset(config.test_features, train.label_mapping)
    return split_into_tasks(train, test, config.task_count, config.protocol, config.base_seed)


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    stream: TaskStream
    runs: list[RunMetrics]
    wall_clock: float | None = None

    def values(self, name: str) -> list[float]:
        return [getattr(run, name) for run in self.runs]

    def summary(self, name: str) -> dict:
        values = [v for v in self.values(name) if v is not None]
        if not values:
            return {"mean": None, "std": None, "values": []}
        return {"mean": float(np.mean(values)), "std": float(np.std(values)), "values": values}

    @property
    def mean_average_accuracy(self) -> float:
        return self.summary("average_accuracy")["mean"]

    def to_dict(self) -> dict:
        out = {
            "format_version": REPORT_VERSION,
            "package_version": __version__,
            "feature_format_version": FORMAT_VERSION,
            "config": self.config.to_dict(),
            "seeds": [run.seed for run in self.runs],
            "stream": {
                "protocol": self.stream.protocol,
                "label_sets": [list(ls) for ls in self.stream.label_sets],
                "fingerprint": self.stream.fingerprint(),
            },
            "summary": {
                name: self.summary(name)
                for name in ("average_accuracy", "average_incremental_accuracy", "prediction_bias")
            },
            "runs": [run.to_dict() for run in self.runs],
        }
        if self.wall_clock is not None:
            out["wall_clock_seconds"] = self.wall_clock
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def confusion_csv(self, normalized: bool = False) -> str:
        """Confusion matrix of the first run."""
        return self.runs[0].confusion.to_csv(normalized)


def run_experiment(config: ExperimentConfig, stream: TaskStream | None = None) -> ExperimentReport:
    started = time.perf_counter()
    if stream is None:
        stream = build_stream(config)
    runs = []
    for i in range(config.run_count):
        seed = config.base_seed + i
        try:
            result = run_sequence(stream, config.strategy, seed)
            metrics = evaluate_sequence(stream, result, seed)
        except ClprobeError as exc:
            raise exc.with_context(f"run {i} (seed {seed})") from None
        if config.self_check:
            failures = check_run(stream, result, metrics, config.strategy)
            if failures:
                raise InvariantError(f"run {i} (seed {seed}): " + "; ".join(failures))
        log.info("run %d seed %d: A_T=%.4f", i, seed, metrics.average_accuracy)
        runs.append(metrics)
    elapsed = time.perf_counter() - started if config.timing else None
    return ExperimentReport(config, stream, runs, elapsed)


SWEEP_AXES = ("memory", "tasks")
SWEEP_COLUMNS = (
    "axis",
    "value",
    "strategy",
    "runs",
    "mean_average_accuracy",
    "std_average_accuracy",
    "mean_average_incremental_accuracy",
    "error",
)


@dataclass
class SweepCell:
    axis: str
    value: int
    strategy: str
    report: ExperimentReport | None = None
    error: str = ""

    def row(self) -> dict:
        row = {"axis": self.axis, "value": self.value, "strategy": self.strategy, "error": self.error}
        if self.report is not None:
            a = self.report.summary("average_accuracy")
            aia = self.report.summary("average_incremental_accuracy")
            row.update(
                runs=len(self.report.runs),
                mean_average_accuracy=a["mean"],
                std_average_accuracy=a["std"],
                mean_average_incremental_accuracy=aia["mean"],
            )
        return row


def sweep(
    config: ExperimentConfig,
    axis: str,
    values: Sequence[int],
    strategies: Sequence[str] | None = None,
) -> list[SweepCell]:
    """One aggregated experiment per (axis value, strategy).

    A failing cell records its error and the sweep carries on.
    """
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")
    strategies = list(strategies or [config.strategy.variant])
    cells = []
    for value in values:
        for name in strategies:
            cell = SweepCell(axis, int(value), name)
            try:
                if axis == "memory":
                    cfg = replace(config, strategy=replace(config.strategy, variant=name, memory_capacity=int(value)))
                else:
                    cfg = replace(config, task_count=int(value), strategy=replace(config.strategy, variant=name))
                cell.report = run_experiment(cfg)
            except ClprobeError as exc:
                cell.error = f"{type(exc).__name__}: {exc}"
                log.warning("sweep cell %s=%s %s failed: %s", axis, value, name, exc)
            cells.append(cell)
    return cells


def sweep_csv(cells: Sequence[SweepCell]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=SWEEP_COLUMNS, lineterminator="\n", restval="")
    writer.writeheader()
    for cell in cells:
        writer.writerow(cell.row())
    return buf.getvalue()
