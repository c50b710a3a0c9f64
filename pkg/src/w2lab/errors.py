"""Exception hierarchy shared by all modules.

The CLI maps these onto exit codes: validation 2, hypothesis 3, numerical 4.
"""


class W2LabError(Exception):
    pass


class ValidationError(W2LabError, ValueError):
    """Malformed or out-of-range input."""


class DomainError(ValidationError):
    """Argument outside the mathematical domain of an operation (e.g. t >= 1)."""


class HypothesisViolation(W2LabError):
    """A bound was requested for inputs that do not satisfy its hypotheses."""

    def __init__(self, condition: str, detail: str = ""):
        self.condition = condition
        self.detail = detail
        msg = f"hypothesis violated: {condition}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class NumericalError(W2LabError, ArithmeticError):
    """Non-finite values encountered during a computation."""
