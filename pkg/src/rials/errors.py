"""Exception hierarchy shared by all modules."""


class RialsError(Exception):
    pass


class InvalidDimension(RialsError, ValueError):
    pass


class DimensionMismatch(RialsError, ValueError):
    pass


class InvalidParameters(RialsError, ValueError):
    pass


class CanonicalFrameRequired(RialsError):
    """Raised when an operation needs u* = e1, v* = e1 but the operator is not in that frame."""


class NotSupportedInStreamedMode(RialsError):
    pass


class NoData(RialsError, ValueError):
    pass


class DegenerateObservation(RialsError, ValueError):
    pass


class SolverFailure(RialsError, ArithmeticError):
    """Base class for failures that terminate a single ALS trial."""


class IllConditionedSubproblem(SolverFailure):
    pass


class DegenerateIterate(SolverFailure):
    pass
