"""Exception types raised across the package."""


class ConsensusUKFError(Exception):
    """Base class for all library errors."""


class InvalidParameterError(ConsensusUKFError, ValueError):
    """A physical or numerical parameter is outside its valid range."""

    def __init__(self, field: str, message: str):
        super().__init__(message)
        self.field = field


class ControllabilityError(ConsensusUKFError):
    pass


class InvalidSpecError(ConsensusUKFError, ValueError):
    pass


class PrecompensationInfeasibleError(ConsensusUKFError):
    pass


class StabilizabilityError(ConsensusUKFError):
    pass


class NumericalError(ConsensusUKFError, ArithmeticError):
    pass


class CovarianceNotPSDError(NumericalError):
    pass


class InnovationSingularError(NumericalError):
    pass


class ConnectivityError(ConsensusUKFError):
    pass


class NetworkValidationError(ConsensusUKFError):
    """Raised when a weight matrix violates a consensus requirement."""

    def __init__(self, prop: str, message: str):
        super().__init__(message)
        self.property = prop


class DivergenceError(NumericalError):
    """A simulation produced a non-finite estimate."""

    def __init__(self, step: int, message: str):
        super().__init__(f"step {step}: {message}")
        self.step = step
