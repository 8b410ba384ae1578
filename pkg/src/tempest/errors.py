"""Exception hierarchy.

Everything raised on purpose by this package derives from ``TempestError`` so
callers (the CLI in particular) can separate expected failures from bugs.
"""


class TempestError(Exception):
    pass


class IoError(TempestError, OSError):
    pass


class EmptyStream(TempestError):
    pass


class MetadataError(TempestError):
    pass


class ParseError(TempestError):
    """Base class for bitstream parsing failures."""


class NoFramesError(ParseError):
    pass


class OggParseError(ParseError):
    pass


class JpegParseError(ParseError):
    pass


class ScanCorruptError(JpegParseError):
    pass


class ConfigError(TempestError, ValueError):
    pass


class EmptyInput(TempestError, ValueError):
    pass


class NotApplicable(TempestError, ValueError):
    pass


class VocabError(TempestError, ValueError):
    pass


class LabelError(TempestError, ValueError):
    pass


class LengthError(TempestError, ValueError):
    pass


class ShapeError(TempestError, ValueError):
    pass


class NumericsError(TempestError, ArithmeticError):
    pass


class ToolNotFound(TempestError):
    pass


class TranscodeError(TempestError):
    pass


class DatasetError(TempestError):
    pass
