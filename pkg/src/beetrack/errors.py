"""Exception hierarchy shared across the package."""


class BeetrackError(Exception):
    """Base class for all beetrack errors."""


class InvalidInputError(BeetrackError, ValueError):
    """An argument violates a documented precondition."""


class DataFormatError(BeetrackError, ValueError):
    """A data file is malformed. Message carries ``path:line`` where possible."""


class ModelFormatError(BeetrackError, ValueError):
    """A model file cannot be loaded (corrupt, wrong kind, or unknown version)."""


class TrainingError(BeetrackError, ValueError):
    """Training preconditions are not met (e.g. a single-class sample set)."""


class InternalError(BeetrackError, RuntimeError):
    """An internal invariant was violated; indicates a bug, not bad input."""
