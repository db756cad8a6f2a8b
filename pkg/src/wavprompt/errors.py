"""Exception types shared across the package."""


class WavPromptError(Exception):
    """Base class for all package errors."""


class ShapeError(WavPromptError, ValueError):
    """Operand shapes are incompatible with the requested operation."""


class NumericError(WavPromptError, ArithmeticError):
    """Non-finite input or a degenerate numeric configuration."""


class ContractError(WavPromptError, ValueError):
    """A precondition of an operation was violated."""


class ConfigError(WavPromptError, ValueError):
    """An invalid configuration value."""


class ArchiveError(WavPromptError, ValueError):
    """A tensor archive is malformed or does not match the model."""
