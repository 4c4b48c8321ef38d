"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """A layout, detector or experiment configuration is inconsistent."""


class InfeasibleError(ValueError):
    """An amplitude adjustment would need a negative intensity.

    ``witness`` carries the candidate values that were rejected.
    """

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class EnumerationLimitError(ValueError):
    """Exhaustive enumeration refused because the instance is too large."""
