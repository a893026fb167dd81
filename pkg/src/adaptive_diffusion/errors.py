"""Exception hierarchy shared by all modules."""


class DiffusionError(Exception):
    """Base class for every error raised by this package."""


class StructuralError(DiffusionError, ValueError):
    """Input has the wrong shape, sign pattern or symmetry."""


class PreconditionError(DiffusionError, ValueError):
    """An operation was called outside its domain of validity."""


class ConstraintError(DiffusionError, ValueError):
    """A constructed object would violate one of its invariants."""


class ParameterError(DiffusionError, ValueError):
    """A scalar parameter is outside its admissible range."""


class ResourceGuardError(DiffusionError):
    """The requested computation exceeds a hard size or horizon limit."""


class ContractError(DiffusionError):
    """A documented pre- or post-condition failed."""


class SearchFailure(DiffusionError):
    """A randomized existence search exhausted its budget.

    ``stage`` names the sub-step that failed and ``diagnostics`` carries
    whatever the search recorded before giving up.
    """

    def __init__(self, message, stage=None, diagnostics=None):
        super().__init__(message)
        self.stage = stage
        self.diagnostics = diagnostics or {}


class ConfigError(DiffusionError, ValueError):
    """Experiment configuration could not be parsed or validated."""
