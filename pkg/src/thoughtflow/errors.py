"""Exception types shared across the package.

Every error raised on purpose derives from :class:`ThoughtflowError`, so
callers (and the CLI) can catch one base class and print a one-line
diagnostic.
"""


class ThoughtflowError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(ThoughtflowError):
    """Shapes of inputs do not line up (vector lengths, matrix dims)."""


class ConfigError(ThoughtflowError):
    """A configuration value is out of its valid range."""


class ContractError(ThoughtflowError):
    """A caller violated an operation's input contract."""


class LifecycleError(ThoughtflowError):
    """An operation was invoked in the wrong phase (e.g. correction
    training before the base model exists)."""


class DivergenceError(ThoughtflowError):
    """Training produced a non-finite loss; the message names the step."""


class NumericsError(ThoughtflowError):
    """A numeric op produced NaN/Inf outside of training."""


class FormatError(ThoughtflowError):
    """A file failed validation on load (bad magic, truncation,
    manifest/record inconsistency)."""
