"""Exception taxonomy shared by all modules.

The CLI maps these onto process exit codes; library callers catch them
directly.
"""


class CmjError(Exception):
    """Base class for all errors raised by this package."""


class UsageError(CmjError):
    """Bad input file, malformed flag value, or invalid configuration."""


class DomainError(UsageError):
    """Evaluation requested outside the domain of a Laplace transform."""


class AssumptionError(CmjError):
    """A model assumption (subcritical instant offspring, existence of a
    Malthusian parameter, precondition of a diagnostic) does not hold."""


class ConvergenceError(CmjError):
    """A quadrature, winding count, bisection or Newton refinement failed
    to converge to its tolerance."""


class PopulationCapError(CmjError):
    """A simulated population exceeded the configured size cap."""

    def __init__(self, message, replica=None):
        super().__init__(message)
        self.replica = replica


class TruncationError(CmjError):
    """A certified truncation bound exceeded the caller's tolerance; the
    tail cutoff must be raised."""
