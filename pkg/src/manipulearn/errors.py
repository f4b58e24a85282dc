"""Exception types raised across the package."""


class ManipulearnError(Exception):
    """Base class for all package errors."""


class DimensionError(ManipulearnError, ValueError):
    pass


class SingularConstraint(ManipulearnError):
    """Plain pseudoinverse requested for a matrix with no nonzero singular value."""


class NumericalDet(ManipulearnError):
    """Gram determinant came out negative beyond round-off."""


class InfeasibleRegion(ManipulearnError):
    """Target sampling rejected too many consecutive draws."""


class DegenerateData(ManipulearnError):
    pass


class ZeroVariance(ManipulearnError):
    pass


class SimulationDiverged(ManipulearnError):
    pass


class FormatError(ManipulearnError, ValueError):
    """Malformed dataset, model, or config file."""


class ConfigError(ManipulearnError, ValueError):
    """Missing or invalid experiment configuration."""
