"""Exception types shared across the toolkit."""


class ValidationError(ValueError):
    """A domain object was constructed with values violating its invariants."""


class FileFormatError(OSError):
    """A binary grid/gather file is malformed (bad magic, truncation, bad payload)."""


class StabilityError(RuntimeError):
    """A time step violates the CFL bound of the chosen stencil."""


class ParameterError(ValueError):
    """A scaling or solver parameter is outside its usable range."""


class MaConvergenceError(RuntimeError):
    """The Monge-Ampere Newton iteration failed to converge.

    Carries the residual history so drivers can log diagnostics or fall back
    to the trace-by-trace misfit.
    """

    def __init__(self, message, residual_history=None):
        super().__init__(message)
        self.residual_history = list(residual_history or [])


class ConfigError(ValueError):
    """An experiment configuration file is missing or inconsistent."""


class NumericalError(RuntimeError):
    """A solver produced non-finite values; carries a state dump for debugging."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state
