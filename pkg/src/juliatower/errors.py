"""Exception hierarchy shared by all modules.

Every numerical failure derives from :class:`NumericalFailure` so the CLI can
map it to exit status 3; bad user input derives from :class:`ValidationError`
(exit status 2).
"""


class JuliaTowerError(Exception):
    pass


class ValidationError(JuliaTowerError, ValueError):
    pass


class NumericalFailure(JuliaTowerError):
    pass


class RootFindingFailed(NumericalFailure):
    pass


class BudgetExceeded(ValidationError):
    pass


class NewtonDiverged(NumericalFailure):
    pass


class NotRepelling(NumericalFailure):
    pass


class NotPeriodic(ValidationError):
    pass


class ContinuationStuck(NumericalFailure):
    pass


class BranchCollision(NumericalFailure):
    pass


class ItineraryMismatch(ValidationError):
    pass


class DegenerateFiber(NumericalFailure):
    pass


class NoBracket(NumericalFailure):
    pass


class LinearizationFailed(NumericalFailure):
    pass


class NotMisiurewicz(ValidationError):
    pass


class TruncationHit(NumericalFailure):
    pass


class ParamOutOfRange(ValidationError):
    pass


class NoConvergence(NumericalFailure):
    pass


class NotAtBowenParameter(ValidationError):
    pass


class MassOnCriticalFiber(NumericalFailure):
    pass


class Disconnected(NumericalFailure):
    pass
