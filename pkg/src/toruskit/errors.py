"""Exception hierarchy.

Every error carries an ``exit_code`` used by the command line driver:
2 for configuration/input problems, 4 for violated bifurcation hypotheses,
5 for numerical failures.
"""


class ToruskitError(Exception):
    exit_code = 5


class ConfigError(ToruskitError):
    exit_code = 2


class ExprSyntaxError(ConfigError):
    def __init__(self, message, position):
        super().__init__(f"{message} at position {position}")
        self.position = position


class UnknownSymbol(ConfigError):
    def __init__(self, name, position=None):
        where = "" if position is None else f" at position {position}"
        super().__init__(f"unknown symbol {name!r}{where}")
        self.name = name
        self.position = position


class DomainError(ToruskitError):
    """Expression evaluated outside its domain (log of non-positive, 1/0, ...)."""


# flow / section
class StepSizeUnderflow(ToruskitError):
    pass


class NoReturn(ToruskitError):
    pass


class TangentialCrossing(ToruskitError):
    pass


class SingularJacobian(ToruskitError):
    pass


class NoConvergence(ToruskitError):
    pass


class BranchLost(ToruskitError):
    pass


class FoldDetected(ToruskitError):
    def __init__(self, message, mu=None):
        super().__init__(message)
        self.mu = mu


# spectral / nshopf
class AmbiguousCritical(ToruskitError):
    exit_code = 4


class NoCrossing(ToruskitError):
    pass


class PairLost(ToruskitError):
    pass


class Degenerate(ToruskitError):
    exit_code = 4


class ResonantEigenvalue(ToruskitError):
    exit_code = 4


class IllConditionedSolve(ToruskitError):
    pass


class HypothesisViolated(ToruskitError):
    """A hypothesis of the bifurcation theorems fails; ``hypothesis`` names it."""

    exit_code = 4

    def __init__(self, hypothesis, message):
        super().__init__(f"hypothesis {hypothesis} violated: {message}")
        self.hypothesis = hypothesis


class HypothesisSViolated(HypothesisViolated):
    def __init__(self, item, message):
        super().__init__(f"S{item}", message)
        self.item = item


class NoEquilibrium(HypothesisViolated):
    def __init__(self, message):
        super().__init__("H", message)


class NoHopfPoint(HypothesisViolated):
    def __init__(self, message):
        super().__init__("H", message)


class TransversalityFails(HypothesisViolated):
    def __init__(self, message, hypothesis="T"):
        super().__init__(hypothesis, message)


class NDFails(HypothesisViolated):
    def __init__(self, message):
        super().__init__("ND", message)


class AllAveragesVanish(HypothesisViolated):
    def __init__(self, message):
        super().__init__("H", message)


# avg
class QuadratureFail(ToruskitError):
    pass


class InsufficientSamples(ToruskitError):
    pass


class IllConditionedFit(ToruskitError):
    pass


# torus
class NoInvariantCircle(ToruskitError):
    pass


class DivergedIteration(ToruskitError):
    pass


class FourierUnderresolved(ToruskitError):
    pass


class WeakGap(ToruskitError):
    pass


class TangentialDrift(ToruskitError):
    pass


class MeshSelfIntersection(ToruskitError):
    pass


class ResidualExceeded(ToruskitError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class TauDiscontinuity(ToruskitError):
    pass
