"""Exception hierarchy shared by all modules."""


class FloqIsingError(Exception):
    """Base class for package errors."""


class InputDomainError(FloqIsingError, ValueError):
    """An argument lies outside the domain of the operation."""


class ConfigError(FloqIsingError, ValueError):
    """A configuration document or option is invalid or missing."""


class ResourceError(FloqIsingError, MemoryError):
    """A request exceeds a configured size or memory cap."""


class FitFailure(FloqIsingError, RuntimeError):
    """A nonlinear fit did not converge or produced an invalid result."""


class InconsistentSpectrumError(FloqIsingError, ValueError):
    """Pauli fidelities do not correspond to a valid probability vector."""


class ExtrapolationError(FloqIsingError, ValueError):
    """Two-point exponential extrapolation is undefined for the inputs."""


class SaturationWarning(UserWarning):
    """A term budget was exhausted and results are partial."""
