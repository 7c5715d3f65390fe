"""Exception hierarchy shared across the library."""


class LotvarError(Exception):
    """Base class for all library errors."""


class NonPositiveWeight(LotvarError):
    pass


class WeightSumMismatch(LotvarError):
    pass


class NonFiniteEntry(LotvarError):
    pass


class DimensionMismatch(LotvarError):
    pass


class MarginalMismatch(LotvarError):
    pass


class NegativeEntry(LotvarError):
    pass


class SolverFailure(LotvarError):
    pass


class InstanceTooLarge(LotvarError):
    pass


class NonUniformWeights(LotvarError):
    pass


class MissingEdges(LotvarError):
    pass


class DegenerateDenominator(LotvarError):
    pass


class DegenerateTraces(LotvarError):
    pass


class NotSymmetric(LotvarError):
    pass


class NotPositiveDefinite(LotvarError):
    pass


class OutOfGrid(LotvarError):
    pass


class ParseError(LotvarError):
    """Raised on malformed input files; carries file/line context in the message."""

    def __init__(self, message, path=None, line=None):
        loc = ""
        if path is not None:
            loc = f"{path}: " if line is None else f"{path}:{line}: "
        super().__init__(f"{loc}{message}")
        self.path = path
        self.line = line
