"""Exception hierarchy shared by all solver modules."""


class LQGameError(Exception):
    """Base class for every error raised by :mod:`lqmfg`."""


class DimensionMismatch(LQGameError, ValueError):
    pass


class NonSymmetric(LQGameError, ValueError):
    pass


class NotSPD(LQGameError, ValueError):
    pass


# The Riccati solver reports a non positive definite right-hand side under this name.
NotPD = NotSPD


class Unstable(LQGameError):
    """Some eigenvalue of a drift matrix has non-negative real part."""


class IllConditioned(LQGameError):
    pass


class Defective(LQGameError):
    """The matrix has no (real) eigenvector basis within the conditioning threshold."""


class StructureMismatch(LQGameError, ValueError):
    pass


class NotNearlyIdentical(LQGameError, ValueError):
    def __init__(self, field, players, message=None):
        self.field = field
        self.players = tuple(players)
        super().__init__(message or f"players {self.players} differ in {field}")


class HypothesisViolation(LQGameError, ValueError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class ConditionsFail(LQGameError):
    """No quadratic-Gaussian solution exists; ``clause`` names the failing test."""

    def __init__(self, clause, message):
        self.clause = clause
        super().__init__(message)


class NumericalBlowup(LQGameError):
    pass


class SpecError(LQGameError, ValueError):
    """A game specification file could not be parsed."""
