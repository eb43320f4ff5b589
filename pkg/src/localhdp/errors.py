"""Exception hierarchy shared across the package."""


class LocalHdpError(Exception):
    """Base class for every error raised by this package."""


class ParseError(LocalHdpError):
    """A file could not be parsed under its declared format."""


class ValidationError(LocalHdpError):
    """Data violates a structural invariant (bad word id, bad label, ...)."""


class ParameterError(LocalHdpError):
    """An argument is outside its documented domain."""


class StructuralError(LocalHdpError):
    """Array shapes or identifiers do not line up between related objects."""


class DescriptorError(LocalHdpError):
    """A local shape descriptor could not be computed for a keypoint."""


class EncodingError(LocalHdpError):
    """Descriptors cannot be encoded against the given dictionary."""


class InferenceError(LocalHdpError):
    """A document is unusable for variational inference (e.g. empty)."""


class NumericalError(LocalHdpError):
    """A computation produced a non-finite or out-of-domain value."""


class ConfigurationError(LocalHdpError):
    """An experiment configuration is incompatible with the supplied data."""


class SnapshotVersionError(LocalHdpError):
    """A snapshot file was written with an unsupported format version."""


class SnapshotIntegrityError(LocalHdpError):
    """A snapshot file is truncated or corrupted."""
