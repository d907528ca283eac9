"""Exception taxonomy shared by all mvlab modules."""


class ConfigurationError(ValueError):
    """A configuration value violates a structural requirement (bad grid, key, constant)."""


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class SimulationDivergedError(RuntimeError):
    """A trajectory left the admissible region (NaN/overflow guard).

    Carries the first offending time so experiment drivers can report it.
    """

    def __init__(self, message, t_bad=None):
        super().__init__(message)
        self.t_bad = t_bad


class CapabilityError(RuntimeError):
    """A model object lacks a closure (derivative, functional) the operation needs."""


class DiffeomorphismError(RuntimeError):
    """The conjugation map failed to be invertible at an evaluated point."""


class CommutativityError(RuntimeError):
    """Order-dependence of the z-integration exceeded tolerance (sigma fields do not commute)."""


class InversionError(RuntimeError):
    """Newton inversion of the conjugation map did not converge."""
