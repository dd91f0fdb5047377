"""Exception taxonomy shared across the package."""


class RomkitError(Exception):
    """Base class for all romkit errors."""


class ConfigurationError(RomkitError):
    """Invalid user-supplied configuration (bad scheme name, negative dt, ...)."""


class DimensionError(RomkitError):
    """Mesh/shape/component mismatch between operands."""


class DataError(RomkitError):
    """Data fails a structural contract (non-finite values, empty set, ...)."""


class RankError(RomkitError):
    """Requested rank exceeds what the data supports."""


class ConditioningError(RomkitError):
    """A linear system is too ill-conditioned to solve reliably."""


class EnrichmentError(RomkitError):
    """Supremizer enrichment failed to produce a usable pairing."""


class SolverDivergenceError(RomkitError):
    """Time integration blew up; message names the offending step."""


class StepError(RomkitError):
    """Newton iteration failed to converge within the iteration budget.

    Carries the residual-norm history of the failed step and, when raised by
    the trajectory driver, whatever part of the trajectory was completed.
    """

    def __init__(self, message, residuals=None, trajectory=None):
        super().__init__(message)
        self.residuals = list(residuals) if residuals is not None else []
        self.trajectory = trajectory


class StageError(RomkitError):
    """A pipeline stage failed; carries the stage name."""

    def __init__(self, stage, message):
        super().__init__(f"stage '{stage}': {message}")
        self.stage = stage
