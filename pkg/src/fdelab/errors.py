"""Exception hierarchy shared by all modules."""


class FdeLabError(Exception):
    """Base class for every error raised by fdelab."""


class ConfigError(FdeLabError, ValueError):
    """Invalid parameters or configuration."""


class GeometryError(ConfigError):
    """Invalid domain geometry or resolution."""


class GridMismatchError(FdeLabError, ValueError):
    """Fields or operators defined on different grids."""


class ZeroFieldError(FdeLabError, ValueError):
    """An operation that needs a nonzero field received zero."""


class SolverError(FdeLabError, RuntimeError):
    """A numerical solve failed to converge."""


class NewtonDivergence(SolverError):
    """Newton iteration for an implicit step did not converge."""


class ExtinctInput(SolverError):
    """The state is already below the extinction floor."""


class MaxStepsExceeded(SolverError):
    pass


class InsufficientData(SolverError):
    """Too few samples for a fit."""


class ShootingBracketError(SolverError):
    pass


class FieldFormatError(FdeLabError, ValueError):
    """Malformed binary field dump."""
