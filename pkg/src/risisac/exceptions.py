"""Exception hierarchy shared by the solver modules."""


class IsacError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(IsacError):
    """Invalid or unparsable scenario configuration."""


class NoBracket(IsacError):
    """Bisection called on an interval without a sign change."""


class SensingInfeasible(IsacError):
    """The detection requirement cannot be met with the available power."""


class NullSpaceExhausted(IsacError):
    """Interference occupies every receive dimension."""


class Infeasible(IsacError):
    """A sub-problem has an empty feasible set.

    ``block`` names the failing block when raised through the
    alternating solver.
    """

    def __init__(self, message, block=None):
        super().__init__(message)
        self.block = block


class InfeasibleStart(Infeasible):
    """No strictly feasible initializer for the MM precoder iterations."""


class SurrogateInfeasible(Infeasible):
    """The linearized radar constraint admits no RIS phase vector."""


class NonConvergence(IsacError):
    """An iterative solver hit its iteration cap.

    ``result`` carries the best feasible iterate found, if any.
    """

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result
