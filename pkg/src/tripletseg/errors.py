"""Exception hierarchy shared across the toolkit.

Every domain failure raises a subclass of :class:`TripletSegError` so the
command line layer can map it to a single exit code. I/O problems are left
to the builtin ``OSError`` family.
"""

from __future__ import annotations


class TripletSegError(Exception):
    """Base class for all domain errors raised by this package."""


class SchemaError(TripletSegError):
    """Invalid or inconsistent triplet vocabulary definition."""


class MaskError(TripletSegError):
    """Malformed run-length mask or incompatible mask geometry."""


class DatasetError(TripletSegError):
    """Ground truth or prediction file violates the documented format."""


class AlignmentError(TripletSegError):
    """Label and mask streams cannot be combined as requested."""


class EvaluationError(TripletSegError):
    """Evaluation request is inconsistent with the provided data."""


class StatsError(TripletSegError):
    """Statistical comparison asked for with invalid inputs."""
