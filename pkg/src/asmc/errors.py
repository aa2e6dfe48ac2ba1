"""Exception types raised across the package."""


class ASMCError(Exception):
    """Base class for all package errors."""


class EvaluationError(ASMCError):
    """An energy or gradient evaluated to a non-finite value."""


class InvariantViolation(ASMCError):
    """A structural invariant (sign, membership, normalization) was broken."""


class PlannerError(ASMCError):
    """Parameter planning could not be carried out with the given inputs."""


class DegenerateWeightsError(ASMCError):
    """All importance weights vanished or were non-finite."""

    def __init__(self, message, level=None):
        super().__init__(message)
        self.level = level


class PropagationError(ASMCError):
    """A particle left the set of finite positions during propagation."""

    def __init__(self, message, particle=None, level=None):
        super().__init__(message)
        self.particle = particle
        self.level = level


class ConfigError(ASMCError):
    """An experiment configuration was malformed or incomplete."""
