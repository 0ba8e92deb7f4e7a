"""Exception hierarchy shared by all pipeline stages."""


class TextileError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(TextileError):
    """A configuration value is missing, malformed or out of range."""


class DegenerateGeometryError(TextileError):
    """Geometry has no usable extent (zero-length curve, empty ring, ...)."""


class InvalidContourError(TextileError):
    """A cross-section contour is self-intersecting or otherwise unusable."""


class InsufficientDataError(TextileError):
    """Too few samples for the requested fit or completion."""


class SingularFitError(TextileError):
    """A least-squares system is rank deficient and has no stable solution."""


class InfeasibleWeaveError(TextileError):
    """A weave specification places yarn axes of one family too close."""


class BudgetExceededError(TextileError):
    """A requested voxel grid exceeds the configured element budget."""


class MeshIntegrityError(TextileError):
    """A generated mesh violates a structural guarantee (closure, counts)."""


class StageError(TextileError):
    """A pipeline stage failed; carries the stage index for exit codes."""

    def __init__(self, stage_index: int, stage_name: str, cause: Exception):
        super().__init__(f"stage {stage_index} ({stage_name}) failed: {cause}")
        self.stage_index = stage_index
        self.stage_name = stage_name
        self.cause = cause
