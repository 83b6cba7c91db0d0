"""Exception hierarchy. Each family maps onto one CLI exit code."""


class OtaError(Exception):
    exit_code = 1


class ValidationError(OtaError, ValueError):
    """Bad input: malformed config, fleet record, or parameter out of domain."""

    exit_code = 2


class DomainError(ValidationError):
    pass


class EmptyFleetError(ValidationError):
    pass


class ModeError(ValidationError):
    """A convex-only quantity was requested with strong_convexity == 0."""


class InfeasibleError(OtaError):
    exit_code = 3


class NoFeasibleScheduleError(InfeasibleError):
    pass


class NoFeasibleRoundsError(InfeasibleError):
    pass


class PeakPowerViolation(InfeasibleError):
    def __init__(self, device_id, factor):
        super().__init__(
            f"device {device_id}: power scaling factor {factor!r} exceeds 1 "
            "(alignment coefficient above its peak-power bound)"
        )
        self.device_id = device_id
        self.factor = factor


class OracleMismatch(OtaError):
    exit_code = 4


class NumericalFailure(OtaError, ArithmeticError):
    exit_code = 5
