"""Exception types shared across the package."""


class StraddleError(ValueError):
    """A mesh cell (or triangle) intersects more than one material region."""


class ResourceLimitError(RuntimeError):
    """A dense-emulation size guard was exceeded."""


class ConvergenceFailure(RuntimeError):
    """An iterative solve did not reach the requested tolerance.

    Carries the final residual and iteration count for diagnostics.
    """

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class EncodingDefect(RuntimeError):
    """A block encoding failed verification against its target matrix."""

    def __init__(self, message, defect=None):
        super().__init__(message)
        self.defect = defect


class UndefinedEstimateError(ValueError):
    """Order-of-convergence estimate is undefined (zero or sign-flipping differences)."""
