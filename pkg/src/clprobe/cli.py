"""``clprobe run | sweep | selfcheck``.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 invariant
failure. Relative output paths resolve against ``$CLPROBE_OUTPUT_DIR`` when
it is set.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .classifier import Classifier, OptimizerConfig
from .data import SyntheticConfig, generate_synthetic_stream
from .errors import ClprobeError, ConfigError, InvariantError
from .runner import (
    STANDARD_OPTIMIZER,
    STANDARD_SYNTHETIC,
    STANDARD_TASKS,
    ExperimentConfig,
    run_experiment,
    sweep,
    sweep_csv,
)
from .strategies import VARIANTS, StrategyConfig, run_sequence

log = logging.getLogger("clprobe")

OUTPUT_DIR_ENV = "CLPROBE_OUTPUT_DIR"

_BOOL_FLAGS = ("synthetic", "class_mean_init", "self_check", "timing")


def read_config_file(path) -> dict[str, str]:
    """Flat ``key = value`` file; keys are CLI flag names without dashes."""
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values


def _parse_bool(value: str) -> bool:
    lowered = value.lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {value!r}")


def _add_experiment_args(p: argparse.ArgumentParser):
    d = STANDARD_SYNTHETIC
    p.add_argument("--config", help="key = value file; command-line flags override it")
    data = p.add_argument_group("data")
    data.add_argument("--train-features", help="training feature file (binary or CSV)")
    data.add_argument("--test-features", help="test feature file sharing the training label ids")
    data.add_argument("--synthetic", action="store_true", help="generate a Gaussian-cluster stream")
    data.add_argument("--classes", type=int, default=d.class_count)
    data.add_argument("--dim", type=int, default=d.dimension)
    data.add_argument("--train-per-class", type=int, default=d.samples_per_class_train)
    data.add_argument("--test-per-class", type=int, default=d.samples_per_class_test)
    data.add_argument("--spread", type=float, default=d.cluster_spread, help="within-class standard deviation")
    data.add_argument("--offset", type=float, default=d.shared_offset, help="norm of the feature offset shared by all classes")
    data.add_argument("--tasks", type=int, default=STANDARD_TASKS)
    data.add_argument("--protocol", choices=("equal", "half-first"), default="equal")
    data.add_argument("--seed", type=int, default=0)
    train = p.add_argument_group("training")
    train.add_argument("--strategy", choices=sorted(VARIANTS), default="taer")
    train.add_argument("--memory", type=int, default=200)
    train.add_argument("--lr", type=float, default=0.1)
    train.add_argument("--epochs", type=int, default=1)
    train.add_argument("--batch", type=int, default=32)
    train.add_argument("--class-mean-init", action="store_true")
    train.add_argument("--runs", type=int, default=3)
    out = p.add_argument_group("output")
    out.add_argument("--report", help="JSON report path (default: stdout)")
    out.add_argument("--confusion", help="confusion matrix CSV path (first run)")
    out.add_argument("--self-check", action="store_true", help="exit 3 if a runtime invariant fails")
    out.add_argument("--timing", action="store_true", help="record wall-clock time in the report")


class _Parser(argparse.ArgumentParser):
    # usage errors are configuration errors (exit 1), not argparse's exit 2
    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    parser = _Parser(prog="clprobe", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    run = sub.add_parser("run", parents=[common], help="train one strategy over a task stream")
    _add_experiment_args(run)
    sw = sub.add_parser("sweep", parents=[common], help="average accuracy across memory sizes or task counts")
    _add_experiment_args(sw)
    sw.add_argument("--axis", choices=("memory", "tasks"), required=True)
    sw.add_argument("--values", required=True, help="comma-separated axis values, e.g. 50,100,200,500")
    sw.add_argument("--strategies", help="comma-separated strategies (default: --strategy)")
    sw.add_argument("--table", help="CSV output path (default: stdout)")
    sc = sub.add_parser("selfcheck", parents=[common], help="invariant checks on a small synthetic stream")
    sc.add_argument("--seed", type=int, default=0)
    return parser


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        file_values = read_config_file(args.config)
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = set(file_values) - known
        if unknown:
            raise ConfigError(f"unknown keys in {args.config}: {sorted(unknown)}")
        defaults = {}
        for key, value in file_values.items():
            defaults[key] = _parse_bool(value) if key in _BOOL_FLAGS else value
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    return args


def experiment_config(args) -> ExperimentConfig:
    optimizer = OptimizerConfig(args.lr, args.batch, args.epochs)
    strategy = StrategyConfig(args.strategy, optimizer, args.memory, args.class_mean_init)
    synthetic = None
    if args.train_features is None:
        synthetic = SyntheticConfig(
            args.classes,
            args.dim,
            args.train_per_class,
            args.test_per_class,
            args.spread,
            args.seed,
            args.offset,
        )
    elif args.synthetic:
        raise ConfigError("--synthetic and --train-features are mutually exclusive")
    return ExperimentConfig(
        strategy,
        synthetic,
        args.train_features,
        args.test_features,
        args.tasks,
        args.protocol,
        args.runs,
        args.seed,
        args.self_check,
        args.timing,
    )


def _output_path(name: str | None) -> Path | None:
    if name is None:
        return None
    path = Path(name)
    base = os.environ.get(OUTPUT_DIR_ENV)
    if base and not path.is_absolute():
        path = Path(base) / path
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _emit(text: str, name: str | None):
    path = _output_path(name)
    if path is None:
        sys.stdout.write(text)
    else:
        path.write_text(text)
        log.info("wrote %s", path)


def cmd_run(args) -> int:
    report = run_experiment(experiment_config(args))
    _emit(report.to_json(), args.report)
    if args.confusion:
        _emit(report.confusion_csv(), args.confusion)
    summary = report.summary("average_accuracy")
    log.info("%s: A_T = %.4f +- %.4f over %d run(s)", args.strategy, summary["mean"], summary["std"], len(report.runs))
    return 0


def cmd_sweep(args) -> int:
    config = experiment_config(args)
    values = [int(v) for v in args.values.split(",") if v.strip()]
    strategies = args.strategies.split(",") if args.strategies else None
    cells = sweep(config, args.axis, values, strategies)
    _emit(sweep_csv(cells), args.table)
    return 0


def selfcheck(seed: int = 0) -> list[str]:
    """Gradient check plus every runtime invariant on a 20-class, 5-task stream."""
    from .checks import check_run, gradient_matches_finite_differences
    from .metrics import evaluate_sequence

    failures = []
    rng = np.random.default_rng(seed)
    for trial in range(10):
        d, c = int(rng.integers(2, 9)), int(rng.integers(2, 7))
        clf = Classifier(rng.standard_normal((d, c)), tuple(range(c)), int(rng.integers(0, c)))
        n = int(rng.integers(1, 6))
        batch = (rng.standard_normal((n, d)), rng.integers(0, c, size=n))
        failures += [f"gradient trial {trial}: {f}" for f in gradient_matches_finite_differences(clf, batch)]
    synthetic = replace(STANDARD_SYNTHETIC, class_count=20, seed=seed)
    stream = generate_synthetic_stream(synthetic, 5)
    for variant in VARIANTS:
        config = StrategyConfig(variant, replace(STANDARD_OPTIMIZER, epochs=2), 40, True)
        result = run_sequence(stream, config, seed)
        metrics = evaluate_sequence(stream, result, seed)
        failures += [f"{variant}: {f}" for f in check_run(stream, result, metrics, config)]
    return failures


def cmd_selfcheck(args) -> int:
    failures = selfcheck(args.seed)
    for failure in failures:
        print(f"FAIL {failure}")
    if failures:
        raise InvariantError(f"{len(failures)} invariant check(s) failed")
    print("selfcheck: all invariants hold")
    return 0


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "selfcheck": cmd_selfcheck}


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
        logging.basicConfig(
            level=logging.INFO if args.verbose else logging.WARNING,
            format="%(levelname)s %(name)s: %(message)s",
        )
        return COMMANDS[args.command](args)
    except ClprobeError as exc:
        print(f"clprobe: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"clprobe: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
