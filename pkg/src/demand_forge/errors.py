"""Exception hierarchy.

Errors fall into two families that the command-line interface maps onto exit codes: :class:`DataError` for
problems with inputs (exit 3) and :class:`NumericalError` for failures of a numerical routine (exit 4).
"""


class DemandForgeError(Exception):
    """Base class for all package errors."""


class DataError(DemandForgeError, ValueError):
    """Input data or configuration violates a documented contract."""


class NumericalError(DemandForgeError, ArithmeticError):
    """A numerical routine failed to produce a valid result."""


class MissingColumn(DataError):
    pass


class DuplicateKey(DataError):
    pass


class OrphanProduct(DataError):
    pass


class MarketSizeViolation(DataError):
    pass


class InconsistentSeries(DataError):
    """A firm- or brand-level value differs across rows that should share it."""


class ZeroGroupShare(DataError):
    pass


class InvalidKernel(DataError):
    pass


class NegativeInput(DataError):
    pass


class InsufficientHistory(DataError):
    pass


class DomainError(DataError):
    """Shares outside the open unit interval."""


class HausmanUndefined(DataError):
    pass


class MissingResidual(DataError):
    pass


class ScenarioError(DataError):
    pass


class NumericOverflow(NumericalError):
    pass


class RankDeficient(NumericalError):
    pass


class NonConvergence(NumericalError):
    """Fixed-effect absorption did not converge."""


class NoConvergence(NumericalError):
    """Equilibrium solver did not converge."""

    def __init__(self, message: str, residual: float = float('nan')) -> None:
        super().__init__(message)
        self.residual = residual


class SingularBlock(NumericalError):
    pass


class BracketFailure(NumericalError):
    pass


class GridTooCoarse(NumericalError):
    pass


class DegenerateMarket(NumericalError):
    pass
