"""Exception hierarchy. Each class maps to a distinct CLI exit code."""


class RescodecError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 1


class FormatError(RescodecError):
    """A file does not conform to one of the RESB/RCBS/RCMP layouts."""

    exit_code = 3


class MalformedHeaderError(FormatError):
    pass


class SizeMismatchError(FormatError):
    pass


class TruncatedStreamError(FormatError):
    pass


class HashMismatchError(RescodecError):
    """Bitstream was produced by a different model than the one supplied."""

    exit_code = 4


class LambdaRangeError(RescodecError):
    """Requested lambda lies outside the model's trained grid."""

    exit_code = 5


class DivergenceError(RescodecError):
    """Training produced a non-finite loss or gradient."""

    exit_code = 6


class ModelStructureError(RescodecError):
    """Operation requires a model component that is not present."""

    exit_code = 8


class CodingError(RescodecError):
    """Entropy coder was asked to code a symbol it cannot represent."""

    exit_code = 9
