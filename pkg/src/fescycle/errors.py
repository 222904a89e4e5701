"""Exception hierarchy shared by all fescycle modules."""


class FESCycleError(Exception):
    """Base class for every error raised by this package."""


class ClosureViolation(FESCycleError):
    """Hip-knee-pedal triangle cannot be closed at the requested crank angle."""


class SingularConfiguration(FESCycleError):
    """Leg is (numerically) fully extended or folded; the knee Jacobian is singular."""


class EpsilonTooLarge(FESCycleError):
    """Stimulation threshold is not below the peak propulsive torque ratio."""


class ConfigError(FESCycleError):
    """Invalid configuration value or file.

    ``line`` carries the 1-based line number in the source file when known.
    """

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class VerificationFailure(FESCycleError):
    """A certified bound was violated by a sampled point."""


class ValidationFailure(VerificationFailure):
    """The collected chi-bound coefficients fail the sampling check."""


class GainConditionViolated(FESCycleError):
    """One of the controller gain conditions does not hold."""

    def __init__(self, condition, message):
        self.condition = condition
        super().__init__(message)


class NegativeA3(FESCycleError):
    """Growth constant a3 is not positive; the tangent-form envelope does not exist."""


class EscapeTimeExceeded(FESCycleError):
    """Requested time is past the finite escape time of the growth envelope."""


class InfeasibleTrajectory(FESCycleError):
    """No positive desired velocity satisfies the requested timing bound."""


class NoCrossing(FESCycleError):
    """Ballistic motion never traverses the uncontrolled region."""


class DegenerateCoefficient(FESCycleError):
    """A coefficient of the ultimate-bound quadratic vanishes."""


class ComplexRoot(FESCycleError):
    """The ultimate-bound quadratic has no real root."""


class SimulationError(FESCycleError):
    """Base for run-time simulation failures; carries the partial trace."""

    def __init__(self, message, trace=None):
        self.trace = trace
        super().__init__(message)


class EscapeDetected(SimulationError):
    """Tracking error norm blew up."""


class NonForwardProgress(SimulationError):
    """Crank stalled or rolled backwards inside the uncontrolled region."""


class MonotonicityWarning(UserWarning):
    """Ballistic crossing time is not monotone in the entry speed on the probe grid."""
