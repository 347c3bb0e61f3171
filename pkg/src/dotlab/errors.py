"""Exception hierarchy for dotlab."""


class DotlabError(Exception):
    """Base class for all library errors."""


class MonotonicityViolation(DotlabError):
    """psi' decreases somewhere on the check grid."""


class NegativeDensity(DotlabError):
    """psi' takes a negative value somewhere on the check grid."""


class CapExceeded(DotlabError):
    """A psi argument exceeded the overflow cap."""


class RangeExceeded(DotlabError):
    """Requested value lies outside the attainable range of psi'."""


class PhiUnavailable(DotlabError):
    """Primal evaluation requested for a divergence without phi."""


class SizeExceeded(DotlabError):
    pass


class DimensionMismatch(DotlabError):
    pass


class RootBracketFailure(DotlabError):
    """No sign change of a marginal equation could be bracketed."""


class NotConverged(DotlabError):
    """The dual solver hit its sweep budget.

    The partially converged :class:`~dotlab.solver.DualSolution` is kept on
    ``solution`` so callers can inspect the residuals.
    """

    def __init__(self, message, solution=None):
        super().__init__(message)
        self.solution = solution


class NotDualRegular(DotlabError):
    pass


class InfeasiblePlan(DotlabError):
    pass


class ZeroVariance(DotlabError):
    pass


class ExperimentAborted(DotlabError):
    """Too many replicates failed to converge."""

    def __init__(self, message, failures=0, total=0):
        super().__init__(message)
        self.failures = failures
        self.total = total


class ParseError(DotlabError):
    def __init__(self, message, line=None, field=None):
        loc = []
        if line is not None:
            loc.append(f"line {line}")
        if field is not None:
            loc.append(f"field {field!r}")
        super().__init__(f"{message} ({', '.join(loc)})" if loc else message)
        self.line = line
        self.field = field


class ValidationError(DotlabError):
    """Carries every violation found, not just the first."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))
