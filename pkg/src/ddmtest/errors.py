"""Exception hierarchy shared across the package."""


class DdmTestError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(DdmTestError, ValueError):
    """A mathematical precondition was violated (e.g. probability not in (0,1))."""


class DataValidationError(DdmTestError, ValueError):
    """Input data (records, CSV rows, configuration values) failed validation."""


class SimulationError(DdmTestError):
    """Path simulation could not be carried out."""


class DegenerateBoundaryError(SimulationError):
    """The stopping boundary is nonpositive at time zero, so every path stops immediately."""


class CensoringError(SimulationError):
    """Too many simulated paths failed to stop before the censoring horizon."""


class EstimationError(DdmTestError):
    """The choice-probability or drift/boundary estimation step failed."""


class DriftNearZeroError(EstimationError):
    """Estimated drift is indistinguishable from zero; the boundary is not identified."""


class DeltaStepError(DdmTestError, ValueError):
    """The difference-quotient step is invalid for the current estimates."""


class NumericalError(DdmTestError):
    """A matrix solve or test statistic could not be computed reliably."""
