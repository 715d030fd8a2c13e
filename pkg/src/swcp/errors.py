"""Exception types shared across the package."""


class InvalidParameter(ValueError):
    """A model or graph parameter is outside its allowed range."""


class InvalidArgument(ValueError):
    """An operation was called with an argument it cannot accept (bad vertex, bad address)."""


class DomainError(ArithmeticError):
    """A closed-form quantity is undefined at the requested parameters."""


class BracketError(ValueError):
    """A bisection bracket does not straddle the target."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ResourceGuardError(RuntimeError):
    """A simulation exceeded its configured site cap."""
