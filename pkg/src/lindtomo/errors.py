"""Exception types shared across the package."""


class LindtomoError(Exception):
    """Base class for all lindtomo errors."""


class SizeLimitError(LindtomoError):
    """Requested system size exceeds the desk-scale qubit guard."""


class ValidationError(LindtomoError):
    """An input object violates one of its declared invariants."""


class NotPositiveSemidefiniteError(ValidationError):
    """A matrix required to be PSD has an eigenvalue below tolerance."""


class PropagationError(LindtomoError):
    """Time evolution produced a state outside the physical tolerance."""


class QuadratureError(LindtomoError):
    """Time quadrature failed to stabilize under step doubling."""


class CountsFormatError(ValidationError):
    """A counts file failed to parse or validate.

    ``line`` is the 1-based line number of the offending row when known.
    """

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class InfeasibleError(LindtomoError):
    """A constrained estimation problem has no feasible point."""
