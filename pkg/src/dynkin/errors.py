"""Exception hierarchy shared across the package."""


class DynkinError(Exception):
    """Base class for all package errors."""


class DomainError(DynkinError, ValueError):
    """A state or coordinate lies outside the admissible domain."""


class SolveFailure(DynkinError):
    """The fundamental solutions could not be constructed."""


class NonConvergentIntegral(DynkinError):
    """A boundary-test integral did not stabilise under refinement."""


class IntegralDivergence(DynkinError):
    """An improper integral against the Green kernel failed to converge."""


class MultipleSignChanges(DynkinError):
    """The generator image of a cost changes sign more than once."""

    def __init__(self, message, crossings=()):
        super().__init__(message)
        self.crossings = tuple(crossings)


class BracketFailure(DynkinError):
    """No sign change was found within the bracket expansion budget."""

    def __init__(self, message, trace=()):
        super().__init__(message)
        self.trace = tuple(trace)


class NoTangent(DynkinError):
    """A tangent-line construction has no solution in its interval."""


class NoRegimeApplies(DynkinError):
    """No equilibrium construction route matches the game."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class RegimeMismatch(DynkinError):
    """An operation was called with an equilibrium of the wrong regime."""


class ConfigError(DynkinError, ValueError):
    """Invalid simulation or solver settings."""


class ParseError(DynkinError, ValueError):
    """Syntax error in an expression or a configuration document."""

    def __init__(self, message, line=None, column=None):
        loc = []
        if line is not None:
            loc.append(f"line {line}")
        if column is not None:
            loc.append(f"column {column}")
        text = f"{message} ({', '.join(loc)})" if loc else message
        super().__init__(text)
        self.line = line
        self.column = column
        self.bare_message = message


class ValidationError(DynkinError, ValueError):
    """Semantically invalid configuration."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class EvalError(DynkinError, ArithmeticError):
    """An expression evaluated to NaN or infinity."""

    def __init__(self, message, subexpression=None):
        super().__init__(message)
        self.subexpression = subexpression
