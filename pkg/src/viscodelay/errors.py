"""Exception hierarchy shared by all modules."""


class ViscoDelayError(Exception):
    """Base class for every error raised by the package."""


class KernelError(ViscoDelayError, ValueError):
    pass


class NonPositiveTerm(KernelError):
    pass


class MassNotLessThanOne(KernelError):
    pass


class EmptyKernel(KernelError):
    pass


class ShapeMismatch(ViscoDelayError, ValueError):
    pass


class InvalidDimension(ViscoDelayError, ValueError):
    pass


class EmptyObservationSet(ViscoDelayError, ValueError):
    pass


class NegativeArgument(ViscoDelayError, ValueError):
    pass


class NonFiniteValue(ViscoDelayError, ArithmeticError):
    pass


class BlowUp(NonFiniteValue):
    """State norm crossed the blow-up threshold."""

    def __init__(self, message, t=None, norm=None):
        super().__init__(message)
        self.t = t
        self.norm = norm


class UnsupportedHistoryFamily(ViscoDelayError, ValueError):
    pass


class HistoryGap(ViscoDelayError, LookupError):
    pass


class InvalidDelay(ViscoDelayError, ValueError):
    pass


class InvalidGain(ViscoDelayError, ValueError):
    pass


class UnboundedBudget(InvalidGain):
    pass


class InfeasibleHypothesis(ViscoDelayError):
    pass


class CorrectorDiverged(ViscoDelayError, ArithmeticError):
    pass


class NotAContraction(ViscoDelayError):
    pass


class NoConvergence(ViscoDelayError, ArithmeticError):
    pass


class NotExponentiallyStable(ViscoDelayError):
    pass


class NonPositiveEnergy(ViscoDelayError, ValueError):
    pass


class ParseError(ViscoDelayError, ValueError):
    pass


class InconsistentConfig(ViscoDelayError, ValueError):
    pass


class UnknownPreset(ViscoDelayError, KeyError):
    pass
