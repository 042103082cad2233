"""Exception hierarchy shared by all solver modules."""


class PhasectlError(Exception):
    """Base class for every error raised by the package."""


class ValidationError(PhasectlError, ValueError):
    """Inputs violate a documented precondition."""


class InvalidDimensionError(ValidationError):
    pass


class SizeCapError(ValidationError):
    pass


class GridMismatchError(ValidationError):
    pass


class SmallnessError(ValidationError):
    """The smallness gate ``alpha * l_stab < 1`` is violated."""


class PotentialRangeError(PhasectlError, ArithmeticError):
    """Potential evaluated too far out (overflow guard)."""


class SolverError(PhasectlError, RuntimeError):
    pass


class LinearSolveError(SolverError):
    def __init__(self, message, residual=float("nan")):
        super().__init__(message)
        self.residual = residual


class NewtonError(SolverError):
    def __init__(self, message, iterations=0, residual=float("nan"), step_index=None):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual
        self.step_index = step_index


class LineSearchError(NewtonError):
    pass


class SingularBlockError(SolverError):
    def __init__(self, message, level=None):
        super().__init__(message)
        self.level = level
