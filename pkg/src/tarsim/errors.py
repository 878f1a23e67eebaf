"""Exception hierarchy shared across the package.

``TarsimError`` is the root; callers that want a broad net catch that.
``ConfigError`` and ``DataError`` map to CLI exit codes 1 and 2.
"""


class TarsimError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(TarsimError):
    """Invalid experiment configuration or parameters."""


class ParameterError(ConfigError):
    """A single operation received an out-of-domain argument."""


class DataError(TarsimError):
    """Input data violates a structural requirement."""


class ParseError(DataError):
    """A corpus file could not be parsed; message names the line."""


class EmptyCorpusError(DataError):
    """A corpus source contained no documents."""


class TaskError(DataError):
    """A category task is unusable (e.g. no positive documents)."""


class DegenerateClassError(DataError):
    """A training set contains only one class."""


class DegenerateSplitError(DataError):
    """A probe split left one side without both classes."""


class UndefinedEstimateError(TarsimError):
    """A recall estimate has a zero denominator."""


class UndefinedVarianceError(TarsimError):
    """A variance bound has a zero denominator."""


class UndefinedCorrelationError(TarsimError):
    """Correlation is undefined (zero variance in an input)."""


class NoKneeError(TarsimError):
    """The gain-curve chord is degenerate; no knee exists."""


class InapplicableRuleError(TarsimError):
    """A stopping rule cannot be applied to this task."""
