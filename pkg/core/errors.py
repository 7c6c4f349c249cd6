"""
Exception hierarchy. Library code raises these; the CLI catches PipelineError
at the command boundary and turns it into a non-zero exit status.
"""

from typing import Optional


class PipelineError(Exception):
    """Base class for every error raised by the pipeline."""


class EmptyInputError(PipelineError):
    pass


class InvalidGeometryError(PipelineError):
    pass


class NoGroundTruthError(PipelineError):
    pass


class PackingFailedError(PipelineError):
    pass


class CoverageError(PipelineError):
    pass


class LabelError(PipelineError):
    pass


class CovarianceError(PipelineError):
    pass


class AlignmentError(PipelineError):
    pass


class EmptyInstanceError(PipelineError):
    pass


class InvalidValueError(PipelineError):
    pass


class SamplingError(PipelineError):
    pass


class ParseError(PipelineError):
    """Malformed or unreadable input file. Carries the location when known."""

    def __init__(
        self,
        path: str,
        message: str,
        line: Optional[int] = None,
        offset: Optional[int] = None,
    ) -> None:
        self.path = path
        self.line = line
        self.offset = offset
        where = ""
        if line is not None:
            where = f" (line {line})"
        elif offset is not None:
            where = f" (byte {offset})"
        super().__init__(f"{path}{where}: {message}")


class ConfigError(PipelineError):
    """Config violation; `field` is the dotted path of the offending field."""

    def __init__(self, field: str, message: str) -> None:
        self.field = field
        super().__init__(f"{field}: {message}")
