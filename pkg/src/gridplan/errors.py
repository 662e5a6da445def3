"""Exception hierarchy shared across the package."""


class GridPlanError(Exception):
    """Base class for all errors raised by this package."""


class DataError(GridPlanError):
    """Malformed or inconsistent input data (grid files, schemas, references)."""


class ConfigError(GridPlanError):
    """Invalid configuration (options, budgets, catalog settings)."""


class InfeasibleError(GridPlanError):
    """The requested operation has no feasible outcome on this grid."""
