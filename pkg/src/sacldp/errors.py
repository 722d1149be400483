"""Exception hierarchy shared by all modules."""


class SacldpError(Exception):
    """Base class for every error raised by the package."""


class DomainError(SacldpError, ValueError):
    """A point lies outside the enclosing computational box."""


class ParameterError(SacldpError, ValueError):
    """An argument violates its documented precondition."""


class StepSizeError(SacldpError):
    """A discrete flow lost the diffeomorphism property; use a smaller time step."""


class InversionError(SacldpError):
    """Newton inversion of a flow slice did not converge."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class DegenerateCoefficientError(SacldpError):
    """The diffusion matrix of the transformed equation is not uniformly elliptic."""


class SolverError(SacldpError):
    """A linear solve failed."""


class StabilityError(SacldpError):
    """A time stepper violated its stability or maximum-principle guard."""


class ConfigError(SacldpError):
    """Invalid experiment configuration."""

    def __init__(self, message, line=None, field=None):
        self.line = line
        self.field = field
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)
