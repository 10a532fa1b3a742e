"""Exception types shared across the package."""


class AxialVCError(Exception):
    """Base class; the CLI maps subclasses of ValidationError to exit code 1."""


class ValidationError(AxialVCError):
    pass


class ShapeError(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


class AudioError(ValidationError):
    pass


class CheckpointError(ValidationError):
    pass


class NonFiniteError(AxialVCError, FloatingPointError):
    pass
