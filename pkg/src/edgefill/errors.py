"""Exception taxonomy for edgefill.

Every failure mode a caller may want to branch on gets its own class; all
inherit from EdgefillError so `except EdgefillError` catches any domain
failure without swallowing programming errors.
"""


class EdgefillError(Exception):
    """Base class for all edgefill domain errors."""


class SequencingError(EdgefillError):
    """Report timestamp not strictly newer than the stored one."""


class SchemaError(EdgefillError):
    """Report shape disagrees with what the device buffer already holds."""


class DeviceNotFoundError(EdgefillError):
    """Lookup of a device with no stored reports."""


class DimensionBoundsError(EdgefillError):
    """Dimension index outside the report's [0, M) range."""


class UndefinedSimilarityError(EdgefillError):
    """Cosine similarity requested for two zero-norm vectors."""


class InsufficientOverlapError(EdgefillError):
    """No shared unmasked dimensions to compare on."""


class InsufficientHistoryError(EdgefillError):
    """Too few usable window rows for a covariance or distance estimate."""


class SingularCovarianceError(EdgefillError):
    """Covariance not positive definite even after regularization."""


class NoLocalDataError(EdgefillError):
    """Local estimate requested for a device with an empty history slice."""


class WgmDomainError(EdgefillError):
    """Weighted geometric mean over non-positive values."""


class DegenerateWeightsError(EdgefillError):
    """Weighted geometric mean with an all-zero weight vector."""


class ImputationImpossibleError(EdgefillError):
    """Neither the local view nor the group view is available for a cell."""


class UndefinedMetricError(EdgefillError):
    """Error metric requested over an empty prediction set."""


class ConfigError(EdgefillError):
    """Invalid experiment, schema, or grid configuration value."""


class TraceParseError(EdgefillError):
    """Malformed trace file content; the message carries the line number."""


class DuplicateReportError(TraceParseError):
    """Two trace rows with the same (device, timestamp) pair."""
