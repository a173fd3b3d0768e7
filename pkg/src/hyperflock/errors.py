"""Exception types raised by hyperflock."""


class HyperflockError(Exception):
    """Base class for all library errors."""


class InvalidParameter(HyperflockError, ValueError):
    pass


class DimensionMismatch(HyperflockError, ValueError):
    pass


class IndexOutOfRange(HyperflockError, IndexError):
    pass


class NumericalFailure(HyperflockError):
    """A numerical routine could not deliver its postcondition."""


class SingularPoint(NumericalFailure):
    """The constraint gradient (nearly) vanishes, so no unit normal exists."""


class RetractionDiverged(NumericalFailure):
    pass


class OutsideCaptureRegion(RetractionDiverged):
    """The point handed to ``retract`` is too far from the surface."""


class SamplingFailed(NumericalFailure):
    pass


class TransversalityViolated(NumericalFailure):
    """``<x, grad c(x)>`` is too small for the oblique projector."""


class NotSPD(InvalidParameter):
    pass


class NotOnSurface(HyperflockError, ValueError):
    pass


class NotEquilibrium(HyperflockError):
    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual
