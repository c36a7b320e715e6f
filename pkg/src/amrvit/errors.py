"""Exception types raised across the package."""


class InvalidArgumentError(ValueError):
    """An argument violates an operation's precondition."""


class ConfigError(ValueError):
    """A model or run configuration is inconsistent."""


class MalformedLayoutError(ValueError):
    """A data file does not follow the expected container layout."""


class UnknownClassError(KeyError):
    """A requested modulation class name is not known."""

    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return str(self.args[0]) if self.args else ""


class InsufficientSamplesError(ValueError):
    """A (class, SNR) cell holds fewer samples than requested."""


class NonFiniteGradientError(FloatingPointError):
    """An optimizer received a NaN/Inf gradient."""


class AugmentationError(RuntimeError):
    """An augmentation could not produce a valid output."""
