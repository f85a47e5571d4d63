"""Exception hierarchy shared by every stage of the pipeline."""


class BirdevoError(Exception):
    """Base class; the CLI maps subclasses onto exit codes."""

    exit_code = 2


class ShapeError(BirdevoError, ValueError):
    """Operand extents do not line up."""


class GenomeError(BirdevoError, ValueError):
    """A genome falls outside the architecture search space."""


class DataError(BirdevoError, ValueError):
    """Malformed, missing or inconsistent data or files."""


class NumericalError(BirdevoError, ArithmeticError):
    """Non-finite values appeared during computation."""

    exit_code = 3


class ConfigError(BirdevoError, ValueError):
    """Unknown or malformed configuration keys."""

    exit_code = 1
