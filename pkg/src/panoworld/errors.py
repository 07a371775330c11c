"""Exception types shared across the package."""


class PanoworldError(Exception):
    """Base class for all package errors."""


class DomainError(PanoworldError, ValueError):
    """Input outside the documented domain of an operation."""


class ShapeError(PanoworldError, ValueError):
    """Tensor or image shape mismatch."""


class DataError(PanoworldError, ValueError):
    """Invalid data content (e.g. class id out of range)."""


class GeometryError(PanoworldError, ValueError):
    """Degenerate or impossible geometric configuration."""


class GenerationError(PanoworldError, RuntimeError):
    """Procedural generation failed to satisfy invariants."""


class NoContextError(PanoworldError, ValueError):
    """An operation requiring at least one valid pixel got none."""


class NumericError(PanoworldError, ArithmeticError):
    """NaN or non-finite value encountered during optimization."""


class ConfigError(PanoworldError, ValueError):
    """Malformed or unknown configuration content."""
