"""Exception hierarchy. Every error carries a short machine-readable ``code``."""


class RmfnlError(Exception):
    code = "internal"


class DimensionError(RmfnlError, ValueError):
    code = "dimension"


class AssumptionError(RmfnlError, ValueError):
    """An observation pattern leaves a row or column of the data empty."""

    code = "assumption"


class ParameterError(RmfnlError, ValueError):
    code = "parameter"


class PenaltyDomainError(RmfnlError, ValueError):
    code = "domain"


class NumericalError(RmfnlError, ArithmeticError):
    code = "numerical"

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class ConsistencyError(RmfnlError, RuntimeError):
    """Raised when a runtime-checked convergence invariant is broken."""

    code = "consistency"

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class ParseError(RmfnlError, ValueError):
    code = "parse"

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
