"""Exception types raised across the package."""


class InvalidGraphError(ValueError):
    pass


class DegreeZeroError(InvalidGraphError):
    """A normalization needs every node to have at least one edge."""


class ShapeError(ValueError):
    pass


class StructuralError(ValueError):
    """Parameters were built for a different graph or neighborhood layout."""


class NumericError(ArithmeticError):
    pass


class MultiplicityError(NumericError):
    """The smallest eigenvalue is not simple."""


class PreconditionError(ValueError):
    pass


class IDXFormatError(ValueError):
    pass
