"""Shared exception base.

Every error raised by this package inherits from ScibenchError so callers
can catch toolkit failures in one clause without masking stdlib bugs.
"""


class ScibenchError(Exception):
    """Base class for all errors raised by this package."""


class StageFailure(ScibenchError):
    """A pipeline stage failed; wraps the underlying error.

    Outputs of stages that completed before the failure are left on disk.
    """

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause
