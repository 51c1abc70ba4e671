"""Exception types shared across the package."""


class OscilabError(Exception):
    """Base class for every error raised deliberately by this package."""


class DomainError(OscilabError, ValueError):
    """An argument lies outside the domain of the operation."""


class UnsupportedError(OscilabError, ValueError):
    """The requested combination of inputs is not handled."""


class ResolutionError(OscilabError, ValueError):
    """A discretization is too coarse for the requested computation.

    ``required`` holds the largest admissible step, so callers can
    retry without guessing.
    """

    def __init__(self, message: str, required: float, actual: float | None = None):
        super().__init__(message)
        self.required = required
        self.actual = actual

    def report(self) -> dict:
        return {"error": "resolution", "message": str(self), "required_step": self.required,
                "actual_step": self.actual}


class UnboundedError(OscilabError, ArithmeticError):
    """A supremum that was expected to be finite diverges."""


class PreconditionError(OscilabError, ValueError):
    """Inputs violate a stated precondition; ``reason`` says which."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


class CertificateError(OscilabError, AssertionError):
    """A pointwise inequality that the definitions force has failed; this
    signals a classification bug rather than bad input."""
