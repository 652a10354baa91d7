"""Exception hierarchy.

Every numeric failure raised by the library derives from :class:`DynamicsError`;
the CLI maps these to exit status 3 and records ``type(err).__name__``.
"""


class DynamicsError(Exception):
    """Base class for numeric/domain failures."""


class ConfigError(ValueError):
    """Bad user input (CLI exit status 2)."""


# sphere geometry
class PoleAt(DynamicsError):
    pass


class OrbitEscaped(DynamicsError):
    pass


class NearPole(DynamicsError):
    pass


class NumericallyUnstable(DynamicsError):
    pass


# map families
class EssentialSingularity(DynamicsError):
    pass


class AsymptoticValue(DynamicsError):
    pass


class BranchPointConflict(DynamicsError):
    pass


class OrbitHitPole(DynamicsError):
    pass


class NotAsymptoticValue(DynamicsError):
    pass


# transfer operator
class BelowBorelThreshold(DynamicsError):
    pass


class PruningOverflow(DynamicsError):
    pass


class BranchLost(DynamicsError):
    pass


# Poincare series / conformal measures
class InconclusiveRatio(DynamicsError):
    pass


class InconsistentRegime(DynamicsError):
    pass


class SubcriticalExponent(DynamicsError):
    pass


class CellTooThin(DynamicsError):
    pass


class NotInjectiveOnCell(DynamicsError):
    pass


# dimension
class NoSignChange(DynamicsError):
    """No sign change of the pressure on the search interval.

    ``flag`` is ``"JuliaLikelySphere"`` when the pressure stays positive and
    ``"InconsistentTruncation"`` when it stays negative; ``estimate`` carries
    the fallback :class:`~merodyn.bowen.DimensionEstimate` if one exists.
    """

    def __init__(self, msg, flag=None, estimate=None):
        super().__init__(msg)
        self.flag = flag
        self.estimate = estimate


class ComplexParameter(DynamicsError):
    pass


class PowerIterationStall(DynamicsError):
    pass


# invariant measure lab
class OutOfRange(DynamicsError):
    pass


class EmptyCell(DynamicsError):
    pass


class CellTooCloseToSingular(DynamicsError):
    pass


class InsufficientAtoms(DynamicsError):
    pass


class NoReturnWithin(DynamicsError):
    pass


class LeftDomain(DynamicsError):
    pass


class TooFewSurvivingOrbits(DynamicsError):
    pass


# box counting
class DegenerateScales(DynamicsError):
    pass
