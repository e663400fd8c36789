"""Exception hierarchy shared by all harnack_lab modules."""


class HarnackLabError(Exception):
    """Base class for every error raised by this package."""


class ShapeMismatch(HarnackLabError, ValueError):
    pass


class DomainError(HarnackLabError, ValueError):
    pass


class NonPositiveField(HarnackLabError, ValueError):
    pass


class PositivityLost(HarnackLabError):
    """A solution value dipped below the configured positivity floor."""

    def __init__(self, message, time=None, minimum=None):
        super().__init__(message)
        self.time = time
        self.minimum = minimum


class StabilityViolation(HarnackLabError):
    pass


class NoConvergence(HarnackLabError):
    pass


class RegimeError(HarnackLabError, ValueError):
    """The (m, p, a, K) hypotheses of a Harnack regime do not hold."""


class SearchFailure(HarnackLabError):
    pass


class Infeasible(HarnackLabError):
    """Raised when no feasible (gamma, delta) pair was found."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class InfeasibleParams(HarnackLabError, ValueError):
    pass


class RadiusTooLarge(HarnackLabError, ValueError):
    pass


class BlowUp(HarnackLabError):
    def __init__(self, message, time, times=None, values=None):
        super().__init__(message)
        self.time = time
        self.times = times
        self.values = values


class NonConvergent(HarnackLabError):
    pass


class SuiteFailure(HarnackLabError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class ParseError(HarnackLabError, ValueError):
    def __init__(self, message, line=None, key=None):
        loc = []
        if line is not None:
            loc.append(f"line {line}")
        if key is not None:
            loc.append(f"key {key!r}")
        prefix = f"[{', '.join(loc)}] " if loc else ""
        super().__init__(prefix + message)
        self.line = line
        self.key = key


class ValidationError(HarnackLabError, ValueError):
    pass
