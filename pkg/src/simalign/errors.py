"""Exception types raised across the package."""


class SimAlignError(Exception):
    """Base class for all errors raised by simalign."""


class NonHermitian(SimAlignError, ValueError):
    pass


class NegativeEigenvalue(SimAlignError, ValueError):
    pass


class ZeroMatrix(SimAlignError, ValueError):
    pass


class OddLength(SimAlignError, ValueError):
    pass


class DimMismatch(SimAlignError, ValueError):
    pass


class ShapeMismatch(SimAlignError, ValueError):
    pass


class DegenerateCovariance(SimAlignError, ValueError):
    pass


class InvalidConfig(SimAlignError, ValueError):
    pass


class MalformedFile(SimAlignError, ValueError):
    pass


class InvariantViolation(SimAlignError, ValueError):
    pass


class SingularGram(SimAlignError, ValueError):
    pass


class AnchorCountMismatch(SimAlignError, ValueError):
    pass


class TooFewPoints(SimAlignError, ValueError):
    pass


class EmptyCluster(SimAlignError, RuntimeError):
    pass


class InvalidSize(SimAlignError, ValueError):
    pass


class DegenerateDistance(SimAlignError, ValueError):
    pass


class ZeroResponse(SimAlignError, ValueError):
    pass


class NonFiniteLoss(SimAlignError, FloatingPointError):
    pass


class SingularAtInfiniteSnr(SimAlignError, ValueError):
    pass


class EmptyPilotSet(SimAlignError, ValueError):
    pass


class MissingClass(SimAlignError, ValueError):
    pass
