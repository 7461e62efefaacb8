"""Exception types shared across the package."""


class GramSolveError(Exception):
    """Base class for all library errors."""


class DimensionMismatch(GramSolveError):
    pass


class RankDeficient(GramSolveError):
    pass


class NonConvergence(GramSolveError):
    pass


class NotLinear(GramSolveError):
    pass


class SolverMismatch(GramSolveError):
    pass


class BudgetExceeded(GramSolveError):
    pass


class ChurnBudgetExceeded(GramSolveError):
    pass


class SingularCapacitance(GramSolveError):
    pass


class DriftViolation(GramSolveError):
    pass


class StabilityViolation(GramSolveError):
    pass


class StaleHandle(GramSolveError):
    pass


class NonPositiveWeights(GramSolveError):
    pass


class Infeasible(GramSolveError):
    pass


class IterationLimit(GramSolveError):
    pass


class NoInterior(GramSolveError):
    pass


class Unbounded(GramSolveError):
    pass


class Disconnected(GramSolveError):
    pass


class ParseError(GramSolveError):
    """Parse failure carrying the 1-based line number of the offending line."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line
