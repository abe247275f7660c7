"""Exception types shared across the package."""


class InvalidArgumentError(ValueError):
    """An argument violates a documented precondition."""


class FormatError(ValueError):
    """A file on disk is not in a format we can read (or is corrupt)."""


class ConvergenceError(RuntimeError):
    """An iterative solver stopped making progress."""
