"""
Error types shared by the estimation pipeline.
"""
from typing import Optional


class WellcapError(Exception):
    """Base class for every error raised by the pipeline."""


class LocatorError(WellcapError, ValueError):
    """A coordinate falls outside the range a locator can encode."""

    def __init__(self, name: str, value: float):
        self.name = name
        self.value = value
        super().__init__(f"{name}={value!r} is outside the encodable range")


class LocatorParseError(WellcapError, ValueError):
    """A locator code is malformed. `position` is 1-based."""

    def __init__(self, code: str, position: int, reason: str):
        self.code = code
        self.position = position
        super().__init__(f"Invalid locator {code!r} at character {position}: {reason}")


class SchemaError(WellcapError):
    """Input file does not follow the documented well schema."""


class RowParseError(WellcapError):
    """A data row could not be parsed. `line` is the 1-based line in the file."""

    def __init__(self, line: int, column: str, value: str, reason: Optional[str] = None):
        self.line = line
        self.column = column
        self.value = value
        detail = f" ({reason})" if reason else ""
        super().__init__(f"Line {line}: cannot parse {column}={value!r}{detail}")


class PipelineError(WellcapError):
    """The preprocessing pipeline cannot continue with the given data."""


class DimensionError(WellcapError, ValueError):
    """Parameter vector or data arrays do not match the model layout."""


class SamplerStartupError(WellcapError, RuntimeError):
    """No finite starting point could be found for a chain."""
