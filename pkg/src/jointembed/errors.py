"""Exception hierarchy shared across the package."""


class JointEmbedError(Exception):
    """Base class for every error raised by jointembed."""


class ValidationError(JointEmbedError, ValueError):
    """Bad input or configuration; the CLI maps these to exit code 1."""


class DimMismatch(ValidationError):
    pass


class ZeroNorm(ValidationError):
    pass


class EmptyInput(ValidationError):
    pass


class InvalidLabel(ValidationError):
    pass


class MissingAttributes(ValidationError):
    pass


class SlicePlanOverflow(ValidationError):
    pass


class NoValidTriplet(ValidationError):
    pass


class BadPKShape(ValidationError):
    pass


class TooFewIdentities(ValidationError):
    pass


class OutOfRange(ValidationError):
    pass


class ShapeMismatch(ValidationError):
    pass


class ConfigConflict(ValidationError):
    pass


class EmptyGalleryAfterFilter(ValidationError):
    pass


class NoRelevant(ValidationError):
    pass


class BadFilename(ValidationError):
    pass


class ParseError(ValidationError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class InvariantViolation(ValidationError):
    pass


class NonFiniteLoss(JointEmbedError, RuntimeError):
    """Training produced a NaN/Inf loss; carries diagnostics."""

    def __init__(self, message, diagnostics=None):
        self.diagnostics = diagnostics or {}
        super().__init__(message)
