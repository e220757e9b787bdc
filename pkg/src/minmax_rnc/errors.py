"""Exception types shared across the package."""


class MinMaxError(Exception):
    pass


class DomainError(MinMaxError, ValueError):
    """A value lies outside the domain an operation accepts (NaN, bounds, spacing)."""


class ShapeError(MinMaxError, ValueError):
    pass


class NumericError(MinMaxError, ArithmeticError):
    """Non-finite value produced during evaluation or differentiation."""


class ClassError(MinMaxError, ValueError):
    """Semiautomaton does not belong to the class a compiler requires."""


class CertificationError(MinMaxError):
    pass


class GenerationError(MinMaxError, ValueError):
    pass
