"""Exception types shared across the package."""


class NumericalOverflowError(FloatingPointError):
    """A function evaluation produced non-finite values."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class NewtonFailure(RuntimeError):
    """Newton iteration for an implicit step did not converge."""

    def __init__(self, message, step=None, ic_index=None):
        super().__init__(message)
        self.step = step
        self.ic_index = ic_index


class BlowUpError(RuntimeError):
    """A closed-loop trajectory exceeded the blow-up threshold."""

    def __init__(self, message, ic_index=None, step=None):
        super().__init__(message)
        self.ic_index = ic_index
        self.step = step


class UnrecoverableStartError(BlowUpError):
    """Training cannot start: the initial network already blows up."""


class RiccatiError(ArithmeticError):
    """The algebraic Riccati equation has no stabilizing solution."""


class RiccatiConvergenceError(RiccatiError):
    """The Riccati residual stays above tolerance after refinement."""

    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual


class LinearSolveError(ArithmeticError):
    """A step matrix of the adjoint recursion is singular."""


class ConfigError(ValueError):
    """Malformed or inconsistent experiment configuration."""


class DimensionMismatchError(ConfigError):
    """Network architecture does not fit the system dimensions."""
