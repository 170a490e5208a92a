"""Exception hierarchy shared across the package."""


class ConfigurationError(ValueError):
    """Invalid configuration, dimensions, or option values."""


class NumericFailureError(FloatingPointError):
    """A non-finite value appeared during evaluation or an update.

    Parameters
    ----------
    message : str
        Human readable description.
    index : int or None
        Offending sample index (into the evaluated batch), when known.
    group : str or None
        Sample group of the offending index, when known.
    """

    def __init__(self, message, index=None, group=None):
        super().__init__(message)
        self.index = index
        self.group = group
        self.context = {}

    def __str__(self):
        msg = super().__str__()
        if self.group is not None:
            msg += f" (group={self.group}, index={self.index})"
        elif self.index is not None:
            msg += f" (index={self.index})"
        if self.context:
            msg += " [" + ", ".join(f"{k}={v}" for k, v in self.context.items()) + "]"
        return msg


class UnsupportedProblemError(ValueError):
    """Operation not defined for the given problem (e.g. no closed form)."""


class MissingReferenceError(FileNotFoundError):
    """A reference solution file is required but was not supplied."""


class CheckpointError(ValueError):
    """Checkpoint is incompatible with the requested configuration."""
