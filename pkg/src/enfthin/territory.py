"""Reactive territories: convex hulls of nerve trees and derived statistics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import CurveKind, NerveSample, NerveTree, PatternError, SummaryCurve, Window


@dataclass(frozen=True)
class Polygon:
    """Vertices in counterclockwise order, shape (k, 2)."""

    vertices: np.ndarray

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float).reshape(-1, 2)
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        if len(v) < 3:
            raise PatternError("polygon needs at least 3 vertices")

    @property
    def area(self) -> float:
        return polygon_area(self.vertices)

    def contains(self, xy: np.ndarray) -> np.ndarray:
        """Closed containment test, valid for convex polygons."""
        xy = np.asarray(xy, dtype=float).reshape(-1, 2)
        v = self.vertices
        inside = np.ones(len(xy), dtype=bool)
        for a, b in zip(v, np.roll(v, -1, axis=0)):
            cross = (b[0] - a[0]) * (xy[:, 1] - a[1]) - (b[1] - a[1]) * (xy[:, 0] - a[0])
            inside &= cross >= -1e-12
        return inside


@dataclass(frozen=True)
class DegenerateHull:
    """Hull of fewer than 3 non-collinear points; ``points`` are the extremes."""

    points: np.ndarray

    area = 0.0


def polygon_area(vertices) -> float:
    """Signed shoelace area (positive for counterclockwise)."""
    v = np.asarray(vertices, dtype=float)
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull(points) -> Polygon | DegenerateHull:
    """Monotone-chain convex hull.

    Returns a counterclockwise :class:`Polygon` without collinear vertices, or a
    :class:`DegenerateHull` holding the extreme points when the input spans
    less than two dimensions.
    """
    pts = np.unique(np.asarray(points, dtype=float).reshape(-1, 2), axis=0)
    if len(pts) == 0:
        raise PatternError("convex hull of an empty point set")
    if len(pts) < 3:
        return DegenerateHull(pts)
    # np.unique sorts lexicographically by (x, y)
    lower: list = []
    for p in pts:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list = []
    for p in pts[::-1]:
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    hull = np.array(lower[:-1] + upper[:-1])
    if len(hull) < 3:
        return DegenerateHull(hull)
    return Polygon(hull)


def tree_points(tree: NerveTree) -> np.ndarray:
    return np.vstack([[(tree.base.x, tree.base.y)], tree.ends_xy()])


def territory_size(tree: NerveTree) -> float:
    """Hull area of base and end points; base-to-farthest-end length if the area is zero."""
    if tree.n_ends == 0:
        raise PatternError(f"tree {tree.tree_id} has no end points; territory undefined")
    pts = tree_points(tree)
    hull = convex_hull(pts)
    if hull.area > 0:
        return hull.area
    return float(np.hypot(*(pts[1:] - pts[0]).T).max())


def sample_territories(sample: NerveSample) -> tuple[list[int], np.ndarray]:
    """(indices of trees with ends, their territory sizes)."""
    idx = [k for k, t in enumerate(sample.trees) if t.n_ends > 0]
    return idx, np.array([territory_size(sample.trees[k]) for k in idx])


def union_area(polygons: Sequence[Polygon], window: Window, resolution: float = 1.0) -> float:
    """Area of the union of convex polygons clipped to ``window``.

    Estimated on a midpoint raster with cell side ``resolution``.
    """
    if not resolution > 0:
        raise ValueError("resolution must be positive")
    if not polygons:
        return 0.0
    nx = max(1, int(np.ceil(window.width / resolution)))
    ny = max(1, int(np.ceil(window.height / resolution)))
    hx, hy = window.width / nx, window.height / ny
    covered = np.zeros((ny, nx), dtype=bool)
    for poly in polygons:
        v = poly.vertices
        i0 = max(0, int(np.floor((v[:, 0].min() - window.xmin) / hx)))
        i1 = min(nx, int(np.ceil((v[:, 0].max() - window.xmin) / hx)))
        j0 = max(0, int(np.floor((v[:, 1].min() - window.ymin) / hy)))
        j1 = min(ny, int(np.ceil((v[:, 1].max() - window.ymin) / hy)))
        if i0 >= i1 or j0 >= j1:
            continue
        xs = window.xmin + (np.arange(i0, i1) + 0.5) * hx
        ys = window.ymin + (np.arange(j0, j1) + 0.5) * hy
        gx, gy = np.meshgrid(xs, ys)
        inside = poly.contains(np.column_stack([gx.ravel(), gy.ravel()]))
        covered[j0:j1, i0:i1] |= inside.reshape(gx.shape)
    return float(covered.sum()) * hx * hy


def ecdf_curve(values, grid) -> SummaryCurve:
    """Right-continuous empirical CDF of ``values`` evaluated on ``grid``."""
    v = np.sort(np.asarray(values, dtype=float).ravel())
    if v.size == 0:
        raise ValueError("ECDF of an empty sample")
    grid = np.asarray(grid, dtype=float)
    return SummaryCurve(grid, np.searchsorted(v, grid, side="right") / v.size, CurveKind.ECDF)
