"""Exception hierarchy shared across the codec."""


class CodecError(Exception):
    """Base class for every error raised by this package."""


class EmptyInputError(CodecError):
    pass


class InvalidInputError(CodecError):
    pass


class DepthMismatchError(CodecError):
    pass


class DepthUnderflowError(CodecError):
    pass


class DepthTooSmallError(CodecError):
    pass


class NotAChildError(CodecError):
    pass


class InvalidCodeError(CodecError):
    pass


class CorruptPyramidError(CodecError):
    pass


class MissingParentError(CodecError):
    pass


class InvalidProbabilityError(CodecError):
    pass


class UnexpectedEofError(CodecError):
    pass


class CorruptStreamError(CodecError):
    pass


class ParseError(CodecError):
    pass


class UnsupportedError(CodecError):
    pass
