"""Exception hierarchy shared by every module."""


class RewrapError(Exception):
    """Base class for library errors."""


class SingularGram(RewrapError):
    """A d x d Gram system is too ill-conditioned to solve."""


class DimensionMismatch(RewrapError, ValueError):
    pass


class BudgetOutOfRange(RewrapError, ValueError):
    pass


class ParameterOutOfRange(RewrapError, ValueError):
    pass


class TooLarge(RewrapError, ValueError):
    """Subset enumeration requested above the size guard."""


class EmptyFeasible(RewrapError):
    """No grid point satisfies the breakdown constraints."""


class UnknownFitter(RewrapError, KeyError):
    pass


class ParseError(RewrapError, ValueError):
    pass
