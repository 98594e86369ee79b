"""Exception hierarchy shared by every stage of the pipeline."""


class RoomAuthError(Exception):
    """Base class for all library errors."""


class PlyError(RoomAuthError):
    """Problem reading or writing a PLY file."""


class PlyHeaderError(PlyError):
    pass


class PlyUnsupportedFormatError(PlyError):
    pass


class NonFiniteCoordinateError(PlyError, ValueError):
    pass


class DegenerateConfigurationError(RoomAuthError, ValueError):
    """Point set has no well-defined rigid fit (too few or collinear points)."""


class EmptyCloudError(RoomAuthError, ValueError):
    pass


class InsufficientStructureError(RoomAuthError):
    """Preprocessing left too few points to describe the scene."""


class IsolatedKeypointError(RoomAuthError):
    """A keypoint has no usable neighbor inside the feature radius."""


class EnrollmentError(RoomAuthError):
    pass


class FingerprintMismatchError(RoomAuthError):
    """Template was produced with different feature-extraction parameters."""


class TemplateFormatError(RoomAuthError):
    pass


class BadMagicError(TemplateFormatError):
    pass


class UnsupportedVersionError(TemplateFormatError):
    pass


class TruncatedTemplateError(TemplateFormatError):
    pass


class ChecksumMismatchError(TemplateFormatError):
    pass


class ManifestError(RoomAuthError):
    pass
