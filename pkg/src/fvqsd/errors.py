"""Exception types shared across the toolkit."""


class FvqsdError(Exception):
    """Base class for toolkit errors."""


class ConfigurationError(FvqsdError):
    """Invalid configuration, arguments or input files."""


class NumericalError(FvqsdError):
    """A numerical routine failed to converge or produced non-finite values."""


class DegeneratePotentialError(FvqsdError):
    """The potential lacks the structure the assumptions require."""


class MassExtinctionError(FvqsdError):
    """All particles exited in one step: dt is too large for this epsilon."""
