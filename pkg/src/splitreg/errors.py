"""Exception types shared across the package."""


class SplitregError(Exception):
    """Base class for all package-specific failures."""


class ConfigError(SplitregError):
    """Invalid configuration (bad value, unknown key, inconsistent sizes)."""


class DrawFailure(SplitregError):
    """A sample draw could not be completed (e.g. accept-reject cap hit)."""

    def __init__(self, message: str, acceptance_rate: float | None = None):
        super().__init__(message)
        self.acceptance_rate = acceptance_rate


class RecursionOverflow(SplitregError):
    """Numerical failure in the symmetric-function recursion."""


class JointProbabilityError(SplitregError):
    """A required second-order inclusion probability is zero or missing."""


class FoldTrainingError(SplitregError):
    """A fold's training set is empty; the fold-wise fit cannot proceed."""


class ConvergenceError(SplitregError):
    """An iterative solver exhausted its sweep budget without converging."""


class HarnessAbort(SplitregError):
    """Too many Monte Carlo replications failed; results would be misleading."""
