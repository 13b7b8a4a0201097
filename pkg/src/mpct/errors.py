"""Exception hierarchy shared by every module of the package."""


class MPCTError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(MPCTError, ValueError):
    pass


class NotPositiveDefinite(MPCTError, ValueError):
    def __init__(self, index, message=None):
        self.index = index
        super().__init__(message or f"matrix not positive definite (failing index {index})")


class SingularCapacitance(MPCTError, ValueError):
    pass


class InvalidBounds(MPCTError, ValueError):
    pass


class NonpositiveScaling(MPCTError, ValueError):
    pass


class HorizonTooShort(MPCTError, ValueError):
    def __init__(self, horizon, index):
        self.horizon = horizon
        self.index = index
        super().__init__(
            f"prediction horizon N={horizon} must exceed the controllability index {index}"
        )


class NumericalFailure(MPCTError, ArithmeticError):
    pass


class MaxIterationsExceeded(MPCTError):
    def __init__(self, iterations, state=None):
        self.iterations = iterations
        self.state = state
        super().__init__(f"ADMM did not converge within {iterations} iterations")


class RiccatiNoStabilizingSolution(MPCTError, ArithmeticError):
    pass


class RankDeficient(MPCTError, ValueError):
    pass


class InvalidTemperature(MPCTError, ValueError):
    pass


class NonFiniteState(MPCTError, ArithmeticError):
    pass


class NotAnEquilibrium(MPCTError, ValueError):
    def __init__(self, residual):
        self.residual = residual
        super().__init__(f"point is not an equilibrium (derivative residual {residual:.3g})")


class InvalidParameters(MPCTError, ValueError):
    pass


class EmptyTrajectory(MPCTError, ValueError):
    pass


class OutOfRange(MPCTError, IndexError):
    pass


class NoSteadyStateFound(MPCTError, ArithmeticError):
    pass


class PlanInvalid(MPCTError, ValueError):
    pass


class ConfigError(MPCTError, ValueError):
    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}")
