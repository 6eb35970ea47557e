"""Exception hierarchy shared by every module."""


class DtrtolError(Exception):
    """Base class for package errors."""


class DomainError(DtrtolError, ValueError):
    """Argument outside the domain of a distribution function."""


class NumericError(DtrtolError, ArithmeticError):
    """An iterative numeric routine failed to converge."""


class DegenerateSampleError(DtrtolError, ValueError):
    """Sample too small or without spread for the requested estimate."""


class SingularDesignError(DtrtolError, ValueError):
    """Design matrix is rank deficient or too badly conditioned."""


class ContractError(DtrtolError, TypeError):
    """An object was passed to a routine that cannot accept it."""


class InsufficientSampleError(DtrtolError, ValueError):
    """Not enough observations to build the requested interval."""


class InsufficientCellError(InsufficientSampleError):
    """A single (s1, a1) cell lacks the data a pipeline step needs.

    ``cell`` is the ``(s1, a1)`` pair and ``method`` the pipeline tag, when known.
    """

    def __init__(self, message, cell=None, method=None):
        super().__init__(message)
        self.cell = cell
        self.method = method

    def __str__(self):
        msg = super().__str__()
        tags = []
        if self.method is not None:
            tags.append(f"method={self.method}")
        if self.cell is not None:
            tags.append(f"cell={tuple(self.cell)}")
        return f"{msg} [{', '.join(tags)}]" if tags else msg


class TooFewRowsError(SingularDesignError, InsufficientSampleError):
    """Fewer observations than regression coefficients."""
