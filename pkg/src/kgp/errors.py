"""Exception taxonomy shared across the package.

The CLI maps these onto process exit codes: validation problems exit 2,
numerical failures exit 3, anything argparse rejects exits 1.
"""


class KgpError(Exception):
    """Base class for all package errors."""


class ValidationError(KgpError):
    """Invalid input: bad shapes, out-of-range values, malformed configs."""


class DimensionError(ValidationError):
    """Shape/conformability mismatch; message names the offending factor."""


class NumericalError(KgpError):
    """Numerical failure: indefinite matrices, non-finite values, overflow."""


class ConvergenceError(NumericalError):
    """Iterative solver exhausted its budget.

    Carries the best residual reached so the caller can decide whether to
    relax the tolerance and retry.
    """

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations
