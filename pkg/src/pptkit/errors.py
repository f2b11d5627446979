"""Exception types shared across the toolkit."""


class PPTError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(PPTError, ValueError):
    pass


class MalformedWav(PPTError):
    pass


class UnsupportedEncoding(PPTError):
    pass


class MalformedFile(PPTError):
    pass


class VersionMismatch(MalformedFile):
    pass


class DimensionMismatch(PPTError, ValueError):
    pass


class InsufficientData(PPTError, ValueError):
    pass


class InvariantViolation(PPTError, ValueError):
    pass


class EmptyCorpus(PPTError, ValueError):
    pass


class UnknownToken(PPTError, ValueError):
    pass


class EmptyInput(PPTError, ValueError):
    pass


class NoVoicedOverlap(PPTError):
    pass


class EmptyReferenceSet(PPTError, ValueError):
    pass


class CorpusTooSmall(PPTError, ValueError):
    pass


class DegenerateGroundTruth(PPTError, ValueError):
    pass


class InsufficientSpeakers(PPTError, ValueError):
    pass


class MalformedRecord(PPTError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class MissingFeatures(PPTError):
    pass


class IdMismatch(PPTError):
    pass
