"""Exception types shared across the package.

Everything raised on purpose derives from G2GanError so callers can catch
one base class at the CLI boundary and map it to an exit code.
"""


class G2GanError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(G2GanError):
    """Invalid or inconsistent configuration values."""


class DatasetError(G2GanError):
    """Dataset cannot be loaded or violates a dataset invariant."""


class ShapeError(G2GanError):
    """Tensor arguments have incompatible or unsupported shapes."""


class LabelError(G2GanError):
    """Domain label out of range or inconsistent with the domain count."""


class NumericsError(G2GanError):
    """A non-finite value appeared where the math requires finite input."""


class EvalError(G2GanError):
    """Evaluation could not produce a trustworthy result."""
