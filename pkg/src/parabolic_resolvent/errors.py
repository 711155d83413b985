"""Exception hierarchy shared by every solver module.

Two families matter to callers: ``ConfigError`` for invalid input that a user
can fix, and ``NumericalFailure`` for a computation that ran but could not
certify its result (divergent series, residual too large, ...).  The command
line front-end maps them to exit codes 1 and 2.
"""


class ParabolicResolventError(Exception):
    """Root of all package exceptions."""


class ConfigError(ParabolicResolventError):
    """Input violates a precondition that the caller controls."""


class NumericalFailure(ParabolicResolventError):
    """A computation could not meet its accuracy or convergence contract.

    The optional second argument carries the solver diagnostics.
    """

    def __init__(self, message="", diagnostics=None):
        super().__init__(message, diagnostics)
        self.message = message
        self.diagnostics = diagnostics

    def __str__(self):
        return str(self.message)


# -- input errors ---------------------------------------------------------
class NotSymmetric(ConfigError):
    pass


class NotElliptic(ConfigError):
    pass


class EmptySector(ConfigError):
    pass


class SectorViolation(ConfigError):
    pass


class StepUnderflow(ConfigError):
    pass


class SlowDecay(ConfigError):
    pass


class NonzeroBoundaryData(ConfigError):
    pass


class CoverTooCoarse(ConfigError):
    pass


class CompatibilityViolated(ConfigError):
    pass


class FamilyEmpty(ConfigError):
    pass


# -- numerical failures ---------------------------------------------------
class SingularSymbol(NumericalFailure):
    pass


class RootOnNegativeAxis(NumericalFailure):
    pass


class IllConditioned(NumericalFailure):
    pass


class QuadratureStall(NumericalFailure):
    pass


class ZeroLambdaZeroMode(NumericalFailure):
    pass


class SeriesDiverging(NumericalFailure):
    pass


class MaxIterExceeded(NumericalFailure):
    pass


class BranchCutHit(NumericalFailure):
    pass


class ChartDegenerate(NumericalFailure):
    pass


class GammaTooSmall(NumericalFailure):
    pass


class WindowTooShort(NumericalFailure):
    pass


class MomentNotZero(NumericalFailure):
    pass
