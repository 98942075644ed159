"""Exception hierarchy.

Every error carries an ``exit_code`` so the CLI can map failures onto its
documented process exit status without a lookup table.
"""


class ClprobeError(Exception):
    exit_code = 1

    def with_context(self, where: str):
        """Prefix the message with ``where`` (run index, phase) and return self."""
        if self.args:
            self.args = (f"{where}: {self.args[0]}",) + self.args[1:]
        else:
            self.args = (where,)
        return self


class ConfigError(ClprobeError, ValueError):
    """Invalid configuration: divisibility, unknown variant, bad flag value."""

    exit_code = 1


class DataError(ClprobeError, ValueError):
    exit_code = 2


class IngestionError(DataError):
    """A feature file could not be parsed.

    ``record`` is the zero-based index of the offending row, or ``None`` when
    the failure is in the header.
    """

    def __init__(self, message, record=None):
        if record is not None:
            message = f"record {record}: {message}"
        super().__init__(message)
        self.record = record


class SamplingError(DataError):
    pass


class ShapeError(ClprobeError, ValueError):
    pass


class LabelError(ClprobeError, ValueError):
    pass


class NumericError(ClprobeError, ArithmeticError):
    pass


class ReplayError(ClprobeError, RuntimeError):
    pass


class StrategyError(ClprobeError, RuntimeError):
    pass


class MetricError(ClprobeError, ValueError):
    pass


class InvariantError(ClprobeError, AssertionError):
    exit_code = 3
