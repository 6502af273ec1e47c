"""Exception hierarchy shared across the simulator."""


class SimulationError(Exception):
    """Base class for all simulator errors."""


class ConfigError(SimulationError):
    """Invalid configuration, parameters, or input validation failure."""


class DimensionError(SimulationError):
    """Mismatched dimensions, site sets, or vector lengths."""


class TruncationError(SimulationError):
    """Bosonic Fock-space truncation was exceeded (leakage guard)."""


class CapabilityError(SimulationError):
    """Requested problem size exceeds what the dense backend supports."""


class NumericalError(SimulationError):
    """Numerical consistency check failed (e.g. imaginary residue too large)."""


class DegenerateInputError(NumericalError):
    """An input is too degenerate for the requested quantity (e.g. zero purity)."""


class NonConvergenceError(NumericalError):
    """Iterative procedure failed to converge; carries the last iterate."""

    def __init__(self, message, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate
