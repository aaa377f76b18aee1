"""Exception types shared across the toolkit."""


class ConfigurationError(ValueError):
    """Invalid geometry, mesh counts, or config file contents."""


class SimulationError(RuntimeError):
    """A time step could not be completed."""


class CFLError(SimulationError):
    """Stability limit exceeded; carries the largest workable step."""

    def __init__(self, message, suggested_dt=None):
        super().__init__(message)
        self.suggested_dt = suggested_dt


class DryCellError(SimulationError):
    """Surface height dropped to zero or below at some plan cell."""


class PressureSolveError(SimulationError):
    """Projection failed to reach the divergence tolerance."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class SpeciesBoundError(SimulationError):
    """Negative-concentration clipping exceeded the accounting tolerance."""


class OptimizationError(RuntimeError):
    """The minimizer could not produce a usable point."""
