"""Exception hierarchy shared by all modules."""


class CrackFreqError(Exception):
    """Base class for every error raised by this package."""


class InvalidProfile(CrackFreqError, ValueError):
    pass


class MeshQualityError(CrackFreqError):
    pass


class IndefiniteSystem(CrackFreqError):
    """Raised when the Dirichlet-reduced system is not positive definite."""


class GradientSingular(CrackFreqError):
    pass


class RadiusTooSmall(CrackFreqError):
    pass


class HeightNotPositive(CrackFreqError):
    """H(r) vanished: only the trivial solution has zero height."""


class HalfIntegerMismatch(CrackFreqError):
    pass


class NonPositiveLimit(CrackFreqError):
    pass


class SolverFail(CrackFreqError):
    pass


class SingularQuadrature(CrackFreqError):
    pass


class SpreadTooLarge(CrackFreqError):
    pass


class NonDecreasingError(CrackFreqError):
    pass


class ScenarioMismatch(CrackFreqError):
    pass


class ConfigError(CrackFreqError, ValueError):
    pass
