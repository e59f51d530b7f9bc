"""Exception hierarchy shared by all modules."""


class FlashSplitError(Exception):
    pass


class ConfigError(FlashSplitError, ValueError):
    """Invalid configuration value or unknown key."""


class ContractError(FlashSplitError, ValueError):
    """A precondition of an operation was violated."""


class ShapeError(ContractError):
    pass


class DegenerateInputError(FlashSplitError, ValueError):
    """Input carries no usable signal (e.g. a constant image)."""


class DatasetLoadError(FlashSplitError, OSError):
    pass


class UsageError(FlashSplitError, RuntimeError):
    """An operation was called on an object in the wrong state."""


class TrainingError(FlashSplitError, RuntimeError):
    def __init__(self, message, step=None, checkpoint=None):
        super().__init__(message)
        self.step = step
        self.checkpoint = checkpoint


class MissingCheckpointError(FlashSplitError, FileNotFoundError):
    pass


class ModeMismatchError(FlashSplitError):
    """Linear/tonemapped mode of inputs and checkpoints disagree."""
