"""Exception hierarchy shared by all modules."""


class ModecoolError(Exception):
    """Base class for all package errors."""


class ConfigError(ModecoolError, ValueError):
    """Invalid user-supplied configuration or input data."""


class NonPositiveRadial(ConfigError):
    pass


class NoConvergence(ModecoolError, RuntimeError):
    pass


class UnstableMode(ModecoolError, RuntimeError):
    pass


class MissingCurvature(ModecoolError, KeyError):
    pass


class InfeasibleTarget(ModecoolError, ValueError):
    pass


class OutOfRange(ModecoolError, ValueError):
    pass


class ZeroCoupling(ModecoolError, ValueError):
    pass


class TruncationLeak(ModecoolError, RuntimeError):
    """Population reached the top Fock level of a truncated basis."""


class UnknownMode(ModecoolError, KeyError):
    pass


class NoSteadyState(ModecoolError, RuntimeError):
    pass


class RatioOutOfRange(ModecoolError, ValueError):
    pass


class DegenerateAbscissa(ModecoolError, ValueError):
    pass


class SingularJacobian(ModecoolError, RuntimeError):
    pass


class TruncationWarning(UserWarning):
    """Fock truncation keeps less thermal weight than requested."""
