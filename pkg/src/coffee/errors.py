"""Exception taxonomy.

CoffeeError is the base for everything the CLI maps to exit code 2
(bad data, bad config, incompatible inputs).  Anything else escaping a
command is treated as an internal failure (exit code 3).
"""


class CoffeeError(Exception):
    """Base class for all data/config errors raised by this package."""


class ConfigError(CoffeeError):
    """Invalid configuration value or combination."""


class SchemaViolationError(CoffeeError):
    """Event data inconsistent with a source schema or mixed-key input."""


class InvalidWindowError(CoffeeError):
    """Aggregation window with end <= start."""


class EventLogParseError(CoffeeError):
    """Malformed event-log line; carries the 1-based line number."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class DimensionError(CoffeeError):
    """Shape disagreement between numeric operands."""


class OutOfRangeError(CoffeeError):
    """Categorical id outside its table, or k outside the index size."""


class EmptySequenceError(CoffeeError):
    """Attention over zero events; the caller must mask or skip."""


class PoisonedGradientError(CoffeeError):
    """Non-finite gradient detected; carries the parameter name."""

    def __init__(self, name: str, message: str = ""):
        super().__init__(message or f"non-finite gradient in parameter {name!r}")
        self.name = name


class CheckpointError(CoffeeError):
    """Corrupt or mismatched binary checkpoint."""


class UndefinedPriorError(CoffeeError):
    """All labels identical; the prior entropy is zero."""


class UndefinedAucError(CoffeeError):
    """Single-class batch; ROC AUC is undefined."""


class InsufficientDataError(CoffeeError):
    """Too few points for a curve statistic."""


class DegenerateFitError(CoffeeError):
    """All x identical; no least-squares slope exists."""


class CausalityError(CoffeeError):
    """An event from the future leaked into a history."""


class IdError(CoffeeError):
    """Reference to an unknown user/ad/content id."""


class SplitError(CoffeeError):
    """A train/eval split left one side empty."""


class AttributeBudgetError(CoffeeError):
    """Enrichment would exceed the 10-attribute cap or duplicate itself."""


class ComparabilityError(CoffeeError):
    """Two runs evaluated on different eval sets cannot be compared."""
