"""
Error hierarchy shared by every layer of the pipeline.

Operations raise these; reports (ValidationReport, StallReport) carry
non-fatal outcomes instead.
"""


class DsiError(Exception):
    """Base class for all pipeline errors."""


class ConfigError(DsiError):
    """Bad or unknown configuration value."""


class SchemaViolation(DsiError):
    """A sample does not conform to the table schema."""

    def __init__(self, row_index: int, message: str):
        super().__init__(f"row {row_index}: {message}")
        self.row_index = row_index


class SinkWriteError(DsiError):
    """The byte sink failed mid-write; the file on the sink is partial."""

    def __init__(self, bytes_written: int, cause: Exception):
        super().__init__(f"partial file after {bytes_written} bytes: {cause}")
        self.bytes_written = bytes_written


class FormatError(DsiError):
    """The file is not a readable columnar file."""


class ChecksumError(FormatError):
    """Stored checksum does not match the bytes read."""


class BoundsError(FormatError):
    """A descriptor points outside the file."""


class PlanMismatchError(DsiError):
    """A read plan does not cover the streams the projection needs."""


class UnknownFeatureError(DsiError):
    """A projection names a feature the file schema does not have."""

    def __init__(self, feature_ids):
        ids = sorted(feature_ids)
        super().__init__(f"unknown feature ids: {ids}")
        self.feature_ids = ids


class DomainError(DsiError):
    """An operator input is outside the operator's domain."""


class WireError(DsiError):
    """Malformed or unexpected frame on the wire."""


class UnknownWorkerError(DsiError):
    """A worker called the master without registering first."""


class MissingPartitionError(DsiError):
    """A session names a partition that has no files."""
