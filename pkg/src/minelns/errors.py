"""Exception hierarchy shared by all modules."""


class MineError(Exception):
    """Base class for every error raised by minelns."""


class ParseError(MineError):
    pass


class IntegrityError(MineError):
    def __init__(self, violations):
        self.violations = list(violations)
        lines = "\n  ".join(self.violations)
        super().__init__(f"instance violates {len(self.violations)} invariant(s):\n  {lines}")


class ConfigError(MineError, ValueError):
    pass


class UnknownBlock(MineError, KeyError):
    pass


class UnknownPit(MineError, KeyError):
    pass


class RangeError(MineError, ValueError):
    pass


class CapacityError(MineError, ValueError):
    pass


class UnknownVariable(MineError, KeyError):
    pass


class DimensionMismatch(MineError, ValueError):
    pass


class BackendError(MineError):
    pass


class InvalidBound(MineError, ValueError):
    pass


class TooLarge(MineError):
    pass


class InfeasibleInstance(MineError):
    pass


class StepError(MineError, ValueError):
    pass


class WindowInfeasible(MineError):
    def __init__(self, window_start, status=None):
        self.window_start = window_start
        self.status = status
        super().__init__(f"window starting at period {window_start} is infeasible ({status})")


class MissingValueElement(MineError, ValueError):
    pass


class StrategyInapplicable(MineError, ValueError):
    pass


class EmptyWeightVector(MineError, ValueError):
    pass


class MissingValues(MineError, ValueError):
    pass


class EmptyHistory(MineError, ValueError):
    pass


class LnsAborted(MineError):
    pass


class IoError(MineError, OSError):
    pass
