# /src/core/errors.py


class PipelineError(Exception):
    """Base class for every error raised by the pattern discovery pipeline."""

    exit_code = 3


class DataError(PipelineError, ValueError):
    """Input data is unreadable, malformed or insufficient for the requested operation."""

    exit_code = 1


class ConfigError(PipelineError, ValueError):
    """The effective configuration is invalid."""

    exit_code = 2


class InvariantError(PipelineError, RuntimeError):
    """An internal invariant was violated (e.g. a cycle in the relation graph)."""

    exit_code = 3


class StaleArtifactError(DataError):
    """An upstream artifact is missing or its digest no longer matches the manifest."""

    def __init__(self, message: str, stage: str):
        super().__init__(f"{message} (rerun stage '{stage}')")
        self.stage = stage


class BucketSkipped(DataError):
    """A bucket of long entities cannot be tested (fewer than two members)."""

    def __init__(self, bucket_kind: str, bucket_key: str, reason: str):
        super().__init__(f"Bucket {bucket_kind}:{bucket_key} skipped: {reason}")
        self.bucket_kind = bucket_kind
        self.bucket_key = bucket_key
        self.reason = reason
