"""Exception types raised across the package."""


class ConfigError(ValueError):
    """Invalid trainer, objective or run configuration."""


class BudgetExceededError(RuntimeError):
    """A particle tree or an exact enumeration table would exceed its size budget."""


class NonFiniteGradientError(FloatingPointError):
    """A gradient component is NaN or infinite."""


class IDXFormatError(ValueError):
    """Malformed IDX file. ``offset`` is the byte position where parsing failed."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset
