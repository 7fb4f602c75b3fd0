"""Exception types shared across the toolkit.

Two families matter for the CLI exit-code contract: ``ValidationError``
covers anything wrong with input data or files (exit code 2), and
``NumericError`` covers failures of the math itself (exit code 3).
"""


class ItsmlabError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(ItsmlabError):
    """Bad input data, files, or schemas."""


class NumericError(ItsmlabError):
    """The computation itself failed (degenerate inputs, non-finite math)."""


# --- tensor file format ---

class BadMagic(ValidationError):
    pass


class UnsupportedDtype(ValidationError):
    pass


class TruncatedPayload(ValidationError):
    pass


class NonFiniteValue(ValidationError):
    pass


class InvalidShape(ValidationError):
    pass


class IoFailure(ValidationError):
    pass


# --- manifest / dataset ---

class SchemaError(ValidationError):
    pass


class MissingFile(ValidationError):
    pass


class InconsistentClassList(ValidationError):
    pass


class MissingSample(ValidationError):
    pass


class MissingAttention(ValidationError):
    pass


# --- compute ---

class ShapeMismatch(ValidationError):
    pass


class GridMismatch(ValidationError):
    pass


class EmptyInput(ValidationError):
    pass


class EmptyForeground(ValidationError):
    pass


class ZeroNormVector(NumericError):
    pass
