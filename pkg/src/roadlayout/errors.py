"""Exception hierarchy shared across the package."""

from __future__ import annotations


class RoadLayoutError(Exception):
    """Base class for every error raised by :mod:`roadlayout`."""


class SchemaMismatchError(RoadLayoutError, ValueError):
    """Attribute counts or names do not line up with the schema."""


class ParseError(RoadLayoutError, ValueError):
    """A serialized record could not be decoded.

    Attributes:
        field: name of the offending field, when one can be identified.
        line: 1-based line number inside a JSONL file, if known.
        message: the description without the line prefix.
    """

    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        self.message = message
        self.field = field
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


class FeasibilityError(RoadLayoutError, ValueError):
    """Scene parameters violate one or more feasibility rules."""

    def __init__(self, report):
        self.report = report
        ids = ", ".join(v.id for v in report)
        super().__init__(f"infeasible scene parameters: {ids}")


class ConfigError(RoadLayoutError, ValueError):
    """Invalid prior, render, noise or CRF configuration."""


class PredictionError(RoadLayoutError, ValueError):
    """An attribute prediction is malformed (bad probabilities, wrong shapes)."""


class InstanceTooLargeError(RoadLayoutError, ValueError):
    """The exhaustive solver was asked to enumerate too many states."""
