"""Exception types shared across the package."""


class ParseError(ValueError):
    """A CSV stream could not be parsed into a rectangular numeric table."""

    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class InsufficientDataError(ValueError):
    """Not enough snapshots for the requested operation."""


class FitError(RuntimeError):
    """The GP system matrix could not be factorized, even with jitter."""

    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class DegenerateSpectrumError(RuntimeError):
    """Two Ritz values are (numerically) coincident; the Vandermonde
    system is singular.  Perturb the data or shrink the window."""


class DivergenceError(RuntimeError):
    """Numerical integration produced a non-finite state or failed to
    advance; carries the last time that was still valid."""

    def __init__(self, message, last_valid_time=None):
        super().__init__(message)
        self.last_valid_time = last_valid_time


class EquilibriumError(RuntimeError):
    """Newton iteration on the power-balance equations did not converge."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual
