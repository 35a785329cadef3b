"""Exception types shared across the package.

The CLI maps each family onto an exit code: input/configuration/hypothesis
problems exit 2, solver and stabilization failures exit 3, falsification
events exit 1.
"""


class NonexpError(Exception):
    """Base class; ``details`` carries machine-readable context."""

    def __init__(self, message, **details):
        super().__init__(message)
        self.details = details


class InputError(NonexpError, ValueError):
    pass


class ConfigurationError(NonexpError):
    pass


class HypothesisError(NonexpError):
    """A hypothesis certificate came back FAIL; nothing was built."""


class ResourceError(NonexpError):
    pass


class SolverError(NonexpError):
    pass


class StabilizationError(SolverError):
    pass


class FalsificationError(NonexpError):
    """Certified hypotheses held but a proven conclusion failed.

    This always indicates a bug in this package. ``details`` is the
    reproduction bundle.
    """
