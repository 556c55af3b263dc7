"""Exception types shared across the package."""


class ParameterError(ValueError):
    """An argument is outside its admissible range."""


class DimensionError(ValueError):
    """Operand shapes do not conform."""


class PreconditionError(ValueError):
    """An operation was called on inputs violating its precondition."""


class IllPosedError(ArithmeticError):
    """The normal operator P_T P_Omega P_T is (numerically) singular on T."""


class NumericalError(ArithmeticError):
    """An iterative routine failed to converge within its iteration cap."""


class IngestionError(ValueError):
    """A matrix or observation file could not be parsed."""
