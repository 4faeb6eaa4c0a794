"""Thinning models, ABC inference and global envelopes for nerve-tree point patterns."""

from .core import (
    CurveKind,
    Group,
    MarkedPointPattern,
    NerveSample,
    NerveTree,
    PatternError,
    Point,
    PointPattern,
    RngSpec,
    SampleSet,
    SummaryCurve,
    Window,
    erode_window,
    nn_distance_marks,
)

__version__ = "0.1.0"

__all__ = [
    "CurveKind",
    "Group",
    "MarkedPointPattern",
    "NerveSample",
    "NerveTree",
    "PatternError",
    "Point",
    "PointPattern",
    "RngSpec",
    "SampleSet",
    "SummaryCurve",
    "Window",
    "erode_window",
    "nn_distance_marks",
]
