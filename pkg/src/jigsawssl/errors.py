"""Exception types shared across the toolkit."""


class ToolkitError(Exception):
    """Base class for all toolkit errors."""


class DivisibilityError(ToolkitError):
    """Image dimensions are not divisible by the requested grid size."""


class ShapeError(ToolkitError):
    """Array/tensor shapes are inconsistent with the operation's contract."""


class CapacityError(ToolkitError):
    """Requested permutation pool exceeds the number of distinct permutations."""


class InputError(ToolkitError):
    """Raw input image cannot be preprocessed (too small, wrong layout)."""


class StepError(ToolkitError):
    """Progressive step index outside the configured range."""


class ConfigError(ToolkitError):
    """Invalid or inconsistent configuration."""


class ConfigMismatchError(ConfigError):
    """A checkpoint was produced under an incompatible configuration."""


class LabelError(ToolkitError):
    """Classification label outside the valid label space."""


class BatchTooSmall(ToolkitError):
    """Batch statistics require at least two samples."""


class NumericsError(ToolkitError):
    """Non-finite value encountered during training."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class ParseError(ToolkitError):
    """Malformed manifest or config row."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message)
        self.line = line


class ManifestError(ToolkitError):
    """Manifest references files that cannot be resolved."""

    def __init__(self, message: str, missing: list[str] | None = None):
        super().__init__(message)
        self.missing = missing or []


class StratifyError(ToolkitError):
    """Stratified split impossible (a class has fewer than two samples)."""


class MetricError(ToolkitError):
    """Metric undefined for the given inputs (e.g. single-class AUC)."""


class CheckpointError(ToolkitError):
    """Checkpoint archive is corrupt or unreadable."""
