"""Domain types for hierarchical nerve-fiber point patterns.

Coordinates are microns. Every container is a frozen dataclass; arrays held
inside are made read-only so values can be shared freely across workers.
"""

from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import spatial


class PatternError(ValueError):
    """Raised when a pattern, window or sample violates a structural invariant."""


class Group(str, enum.Enum):
    HEALTHY = "healthy"
    MILD = "mild"
    MODERATE = "moderate"


class CurveKind(str, enum.Enum):
    K = "K"
    L_CENTERED = "L_centered"
    F = "F"
    MARKCORR = "markcorr"
    ECDF = "ecdf"


def _frozen_array(values, ndim: int) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.size == 0:
        arr = arr.reshape((0, 2) if ndim == 2 else (0,))
    if arr.ndim != ndim or (ndim == 2 and arr.shape[1] != 2):
        raise PatternError(f"expected a {ndim}-d coordinate array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Point:
    x: float
    y: float

    def __post_init__(self):
        if not (np.isfinite(self.x) and np.isfinite(self.y)):
            raise PatternError(f"non-finite coordinate ({self.x}, {self.y})")


@dataclass(frozen=True)
class Window:
    """Closed axis-aligned rectangle."""

    xmin: float = 0.0
    ymin: float = 0.0
    xmax: float = 330.0
    ymax: float = 432.0

    def __post_init__(self):
        vals = (self.xmin, self.ymin, self.xmax, self.ymax)
        if not all(np.isfinite(v) for v in vals):
            raise PatternError(f"non-finite window bounds {vals}")
        if not (self.xmax > self.xmin and self.ymax > self.ymin):
            raise PatternError(f"degenerate window {vals}")

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def height(self) -> float:
        return self.ymax - self.ymin

    @property
    def area(self) -> float:
        return self.width * self.height

    def contains(self, xy) -> np.ndarray:
        """Boolean mask of rows of ``xy`` lying in the closed window."""
        xy = np.asarray(xy, dtype=float).reshape(-1, 2)
        return (
            (xy[:, 0] >= self.xmin)
            & (xy[:, 0] <= self.xmax)
            & (xy[:, 1] >= self.ymin)
            & (xy[:, 1] <= self.ymax)
        )

    def boundary_distance(self, xy) -> np.ndarray:
        xy = np.asarray(xy, dtype=float).reshape(-1, 2)
        return np.minimum.reduce(
            [
                xy[:, 0] - self.xmin,
                self.xmax - xy[:, 0],
                xy[:, 1] - self.ymin,
                self.ymax - xy[:, 1],
            ]
        )

    def overlap_area(self, dx, dy) -> np.ndarray:
        """|W ∩ (W + (dx, dy))| for arrays of shift vectors."""
        dx = np.abs(np.asarray(dx, dtype=float))
        dy = np.abs(np.asarray(dy, dtype=float))
        return np.clip(self.width - dx, 0.0, None) * np.clip(self.height - dy, 0.0, None)

    def dilate(self, r: float) -> "Window":
        return Window(self.xmin - r, self.ymin - r, self.xmax + r, self.ymax + r)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def erode_window(window: Window, r: float) -> Window:
    """Shrink ``window`` by ``r`` on every side.

    Raises
    ------
    PatternError
        If ``r`` is negative or the eroded window would be empty.
    """
    if not r >= 0:
        raise PatternError(f"erosion distance must be >= 0, got {r}")
    if 2 * r >= window.width or 2 * r >= window.height:
        raise PatternError(
            f"erosion r={r} too large for a {window.width} x {window.height} window"
        )
    return Window(window.xmin + r, window.ymin + r, window.xmax - r, window.ymax - r)


@dataclass(frozen=True)
class PointPattern:
    """Simple planar pattern observed in a window, stored as an (n, 2) array."""

    xy: np.ndarray
    window: Window = field(default_factory=Window)

    def __post_init__(self):
        xy = _frozen_array(self.xy, 2)
        object.__setattr__(self, "xy", xy)
        if not np.all(np.isfinite(xy)):
            raise PatternError("non-finite coordinates in pattern")
        outside = np.flatnonzero(~self.window.contains(xy))
        if outside.size:
            i = outside[0]
            raise PatternError(f"point {i} at ({xy[i, 0]}, {xy[i, 1]}) lies outside {self.window}")
        if len(xy) > 1 and len(np.unique(xy, axis=0)) != len(xy):
            raise PatternError("pattern contains duplicate points")

    @classmethod
    def from_points(cls, points: Iterable[Point], window: Window) -> "PointPattern":
        return cls(np.array([(p.x, p.y) for p in points], dtype=float).reshape(-1, 2), window)

    def __len__(self) -> int:
        return len(self.xy)

    @property
    def points(self) -> list[Point]:
        return [Point(float(x), float(y)) for x, y in self.xy]

    @property
    def intensity(self) -> float:
        return len(self) / self.window.area


@dataclass(frozen=True)
class MarkedPointPattern:
    pattern: PointPattern
    marks: np.ndarray

    def __post_init__(self):
        marks = _frozen_array(self.marks, 1)
        object.__setattr__(self, "marks", marks)
        if len(marks) != len(self.pattern):
            raise PatternError(f"{len(marks)} marks for {len(self.pattern)} points")
        if not np.all(np.isfinite(marks)):
            raise PatternError("non-finite marks")

    def __len__(self) -> int:
        return len(self.pattern)


def nearest_neighbour_distances(xy: np.ndarray) -> np.ndarray:
    """Distance from each row of ``xy`` to its nearest other row."""
    xy = np.asarray(xy, dtype=float)
    if len(xy) < 2:
        raise PatternError("nearest-neighbour distance needs at least 2 points")
    dist, _ = spatial.cKDTree(xy).query(xy, k=2)
    return dist[:, 1]


def nn_distance_marks(pattern: PointPattern) -> MarkedPointPattern:
    """Mark every point with the distance to its closest other point."""
    return MarkedPointPattern(pattern, nearest_neighbour_distances(pattern.xy))


@dataclass(frozen=True)
class NerveTree:
    """A base point with the end points attached to it."""

    tree_id: int
    base: Point
    ends: tuple[Point, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "ends", tuple(self.ends))

    @property
    def n_ends(self) -> int:
        return len(self.ends)

    def ends_xy(self) -> np.ndarray:
        return np.array([(p.x, p.y) for p in self.ends], dtype=float).reshape(-1, 2)


@dataclass(frozen=True)
class NerveSample:
    sample_id: str
    subject_id: str
    group: Group
    trees: tuple[NerveTree, ...]
    window: Window = field(default_factory=Window)

    def __post_init__(self):
        object.__setattr__(self, "group", Group(self.group))
        object.__setattr__(self, "trees", tuple(self.trees))
        ids = [t.tree_id for t in self.trees]
        if len(set(ids)) != len(ids):
            raise PatternError(f"sample {self.sample_id}: duplicate tree ids")
        bases = self.bases_xy()
        if len(bases) > 1 and len(np.unique(bases, axis=0)) != len(bases):
            raise PatternError(f"sample {self.sample_id}: duplicate base points")
        for t in self.trees:
            pts = np.vstack([[(t.base.x, t.base.y)], t.ends_xy()])
            if not np.all(self.window.contains(pts)):
                raise PatternError(
                    f"sample {self.sample_id}, tree {t.tree_id}: point outside window"
                )

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    @property
    def n_ends(self) -> int:
        return sum(t.n_ends for t in self.trees)

    def bases_xy(self) -> np.ndarray:
        return np.array([(t.base.x, t.base.y) for t in self.trees], dtype=float).reshape(-1, 2)

    def ends_xy(self) -> np.ndarray:
        if not self.trees:
            return np.empty((0, 2))
        return np.vstack([t.ends_xy() for t in self.trees])

    def base_pattern(self) -> PointPattern:
        return PointPattern(self.bases_xy(), self.window)

    def end_pattern(self) -> PointPattern:
        # coincident end points of different trees are possible in principle but
        # have probability zero under every simulator in this package
        return PointPattern(self.ends_xy(), self.window)

    def with_trees(self, trees: Sequence[NerveTree]) -> "NerveSample":
        return dataclasses.replace(self, trees=tuple(trees))


@dataclass(frozen=True)
class SampleSet:
    samples: tuple[NerveSample, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        keys = [(s.subject_id, s.sample_id) for s in self.samples]
        if len(set(keys)) != len(keys):
            raise PatternError("duplicate (subject_id, sample_id) pairs in sample set")

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def by_group(self, group) -> "SampleSet":
        group = Group(group)
        return SampleSet(s for s in self.samples if s.group is group)

    def subjects(self) -> dict[str, list[NerveSample]]:
        """Samples keyed by subject, in first-appearance order."""
        out: dict[str, list[NerveSample]] = {}
        for s in self.samples:
            out.setdefault(s.subject_id, []).append(s)
        return out

    def get(self, sample_id: str) -> NerveSample:
        for s in self.samples:
            if s.sample_id == sample_id:
                return s
        raise KeyError(sample_id)


@dataclass(frozen=True)
class SummaryCurve:
    """A function estimate on a fixed r-grid; NaN marks a missing value."""

    grid: np.ndarray
    values: np.ndarray
    kind: CurveKind

    def __post_init__(self):
        grid = _frozen_array(self.grid, 1)
        values = _frozen_array(self.values, 1)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "kind", CurveKind(self.kind))
        if len(grid) != len(values):
            raise PatternError(f"grid has {len(grid)} points but {len(values)} values")
        if np.any(np.diff(grid) <= 0):
            raise PatternError("curve grid must be strictly increasing")

    def __len__(self) -> int:
        return len(self.grid)


_SEED_MASK = (1 << 64) - 1


@dataclass(frozen=True)
class RngSpec:
    """Reproducible seed. Child seeds are a pure function of (seed, keys)."""

    base_seed: int

    def __post_init__(self):
        object.__setattr__(self, "base_seed", int(self.base_seed) & _SEED_MASK)

    def generator(self) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence(self.base_seed))

    def child(self, *keys: int) -> "RngSpec":
        ss = np.random.SeedSequence(self.base_seed, spawn_key=tuple(int(k) for k in keys))
        lo, hi = ss.generate_state(2, dtype=np.uint32)
        return RngSpec((int(hi) << 32) | int(lo))


def as_generator(rng) -> np.random.Generator:
    """Accept an RngSpec, an int seed or an existing Generator."""
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngSpec):
        return rng.generator()
    return RngSpec(int(rng)).generator()
