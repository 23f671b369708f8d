"""Exception taxonomy shared by all modules."""

from __future__ import annotations


class DicError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(DicError, ValueError):
    """Operand shapes are inconsistent with the requested operation."""


class ConfigError(DicError, ValueError):
    """A configuration value is out of range or unresolvable."""


class StepError(DicError, ValueError):
    """A timestep index falls outside the valid range of the schedule."""


class InjectionError(DicError, ValueError):
    """An attention override does not match the model's native shapes."""


class AlignmentError(DicError, ValueError):
    """A token alignment is unusable for the prompts at hand."""


class CapabilityError(DicError, TypeError):
    """The selected model does not support the requested operation."""


class ManifestError(DicError, ValueError):
    """A benchmark manifest is malformed."""


class DiclError(DicError, ValueError):
    """A latent file does not conform to the DICL container format."""


class NumericError(DicError, ArithmeticError):
    """A non-finite value appeared where only finite values are allowed."""

    def __init__(self, message: str, step: int | None = None):
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)
        self.step = step
