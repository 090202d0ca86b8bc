"""Exception types raised across the package."""


class U2Error(Exception):
    """Base class for all package errors."""


class SampleRateUnsupported(U2Error):
    pass


class TooShort(U2Error):
    pass


class WavFormatError(U2Error):
    pass


class NonFinite(U2Error):
    pass


class ShapeMismatch(U2Error):
    pass


class StateCorrupt(U2Error):
    pass


class InfeasibleLength(U2Error):
    pass


class EmptyReference(U2Error):
    pass


class ZeroAudio(U2Error):
    pass


# model file errors
class ModelFormatError(U2Error):
    pass


class BadMagic(ModelFormatError):
    pass


class UnsupportedVersion(ModelFormatError):
    pass


class Truncated(ModelFormatError):
    pass


class ManifestMismatch(ModelFormatError):
    pass


# runtime / service
class UnsupportedMode(U2Error):
    pass


class SessionFinalized(U2Error):
    pass


class ProtocolViolation(U2Error):
    pass


class ConnectionLost(U2Error):
    pass


class MalformedReply(U2Error):
    pass
