"""Exception hierarchy shared across the package."""


class FeatinvError(Exception):
    """Base class for all errors raised by this package."""


class UsageError(FeatinvError):
    """Bad user input: unknown layer, filter out of range, unreadable file.

    The CLI maps this class to exit code 1.
    """


class WeightsError(FeatinvError):
    """Weights file missing, corrupt, or not matching the expected layout."""


class OptimizationError(FeatinvError):
    """Optimization diverged or could not make progress.

    The CLI maps this class to exit code 2.
    """


class NonFiniteLossError(OptimizationError):
    """An objective evaluated to NaN or infinity."""
