"""Exception hierarchy shared by all modules."""


class NematicError(Exception):
    """Base class for every error raised by the package."""

    code = "NematicError"


class NonPositiveConstant(NematicError, ValueError):
    code = "NonPositiveConstant"


class DegenerateSpeed(NematicError, ValueError):
    """alpha == gamma: the wave speed is constant (excluded semilinear case)."""

    code = "DegenerateSpeed"


class OutOfRange(NematicError, ValueError):
    code = "OutOfRange"


class UnitNormViolation(NematicError, ValueError):
    code = "UnitNormViolation"


class NonFiniteDerivative(NematicError, ValueError):
    code = "NonFiniteDerivative"


class GridMismatch(NematicError, ValueError):
    code = "GridMismatch"


class InvariantViolation(NematicError, ValueError):
    code = "InvariantViolation"


class PicardDivergence(NematicError, RuntimeError):
    code = "PicardDivergence"


class InvariantBlowup(NematicError, RuntimeError):
    code = "InvariantBlowup"


class TauOutOfRange(NematicError, ValueError):
    code = "TauOutOfRange"


class SingularRegionCrossed(NematicError, RuntimeError):
    code = "SingularRegionCrossed"


class OptimizerFailure(NematicError, RuntimeError):
    code = "OptimizerFailure"


class CommonGridFailure(NematicError, ValueError):
    code = "CommonGridFailure"


class GradientExplosion(NematicError, RuntimeError):
    code = "GradientExplosion"


class NoOverlap(NematicError, ValueError):
    code = "NoOverlap"


class ConfigError(NematicError, ValueError):
    code = "ConfigError"
