"""Exception hierarchy shared across the engine."""


class KdfuseError(Exception):
    """Base class for all engine errors."""


class CacheError(KdfuseError):
    """Base class for tensor-cache I/O errors."""


class BadMagic(CacheError):
    pass


class UnsupportedVersion(CacheError):
    pass


class UnsupportedDtype(CacheError):
    pass


class TruncatedPayload(CacheError):
    """Payload length does not match the header (short or excess bytes)."""


class NaNPayload(CacheError):
    pass


class InvariantViolation(CacheError):
    """Tensor fails its role invariants; refused before writing."""


class MissingFile(CacheError):
    pass


class ShapeMismatch(KdfuseError):
    pass


class ChecksumMismatch(CacheError):
    pass


class ManifestError(CacheError):
    pass


class DomainError(KdfuseError):
    pass


class LabelOutOfRange(KdfuseError):
    pass


class ZeroNormFeature(KdfuseError):
    pass


class InvalidArchitecture(KdfuseError):
    pass


class DivergenceDetected(KdfuseError):
    pass


class TotalMismatch(KdfuseError):
    pass


class InsufficientSamples(KdfuseError):
    pass


class UnknownKind(KdfuseError):
    pass


class UnrealizableSpec(KdfuseError):
    pass


class ConfigError(KdfuseError):
    pass


class StageError(KdfuseError):
    """A pipeline stage failed; carries the stage name."""

    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
