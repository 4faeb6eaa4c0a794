"""Second-order and empty-space summary functions for planar patterns.

All estimators use the translation edge correction 1 / |W_x ∩ W_y|.
Replicated patterns are combined with square point number weights, first
samples within a subject and then subjects within a group.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import spatial

from .core import (
    CurveKind,
    MarkedPointPattern,
    PatternError,
    PointPattern,
    SummaryCurve,
    Window,
    as_generator,
    erode_window,
)

__all__ = [
    "DEFAULT_GRID",
    "FConfig",
    "PoolingWeights",
    "SummaryUndefined",
    "EmptyPatternWarning",
    "estimate_K",
    "centered_L",
    "square_point_weights",
    "pool_curves",
    "pool_hierarchical",
    "mark_correlation",
    "silverman_bandwidth",
    "empty_space_F",
    "abc_summary",
    "stratified_test_points",
]

DEFAULT_GRID = np.arange(0.0, 101.0)


class SummaryUndefined(ValueError):
    """The F-threshold summary does not exist on the given grid."""


class EmptyPatternWarning(UserWarning):
    pass


def _check_grid(grid) -> np.ndarray:
    grid = np.asarray(grid, dtype=float).ravel()
    if grid.size == 0 or np.any(np.diff(grid) <= 0) or grid[0] < 0:
        raise PatternError("grid must be nonempty, nonnegative and strictly increasing")
    return grid


def _pairs(xy: np.ndarray):
    """Upper-triangle pair distances and coordinate differences."""
    i, j = np.triu_indices(len(xy), k=1)
    dx = xy[i, 0] - xy[j, 0]
    dy = xy[i, 1] - xy[j, 1]
    return i, j, np.hypot(dx, dy), dx, dy


def estimate_K(pattern: PointPattern, grid) -> SummaryCurve:
    """Translation-corrected Ripley K on ``grid``.

    K(r) = |W|^2 / n^2 * sum_{i != j} 1{d_ij <= r} / |W_xi ∩ W_xj|
    """
    grid = _check_grid(grid)
    n = len(pattern)
    if n < 2:
        raise PatternError(f"K needs at least 2 points, got {n}")
    w = pattern.window
    if grid[-1] >= min(w.width, w.height):
        raise PatternError(
            f"grid max {grid[-1]} must be below the window side {min(w.width, w.height)}"
        )
    _, _, d, dx, dy = _pairs(pattern.xy)
    keep = d <= grid[-1]
    d = d[keep]
    weight = 1.0 / w.overlap_area(dx[keep], dy[keep])
    order = np.argsort(d, kind="stable")
    cum = np.concatenate([[0.0], np.cumsum(weight[order])])
    idx = np.searchsorted(d[order], grid, side="right")
    values = 2.0 * cum[idx] * w.area**2 / n**2
    return SummaryCurve(grid, values, CurveKind.K)


def centered_L(K_curve: SummaryCurve) -> SummaryCurve:
    """sqrt(K / pi) - r; NaN entries pass through."""
    K = K_curve.values
    if np.any(K[~np.isnan(K)] < 0):
        raise PatternError("K values must be nonnegative")
    return SummaryCurve(K_curve.grid, np.sqrt(K / np.pi) - K_curve.grid, CurveKind.L_CENTERED)


@dataclass(frozen=True)
class PoolingWeights:
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("pooling weights must be nonnegative and sum to 1")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    def __len__(self):
        return len(self.weights)


def square_point_weights(counts: Sequence[int]) -> PoolingWeights:
    """w_i = n_i^2 / sum_k n_k^2."""
    c = np.asarray(counts, dtype=float)
    if np.any(c < 0):
        raise ValueError("point counts must be nonnegative")
    sq = c**2
    total = sq.sum()
    if total <= 0:
        raise ValueError("all point counts are zero")
    w = sq / total
    # absorb rounding so the weights sum to 1 to within an ulp
    w[np.argmax(w)] += 1.0 - w.sum()
    return PoolingWeights(w)


def pool_curves(curves: Sequence[SummaryCurve], weights: PoolingWeights) -> SummaryCurve:
    """Pointwise weighted mean.

    Missing values (NaN) are dropped and the remaining weights renormalised at
    that grid point; a point missing in every curve stays missing.
    """
    if not curves:
        raise ValueError("no curves to pool")
    if len(curves) != len(weights):
        raise ValueError(f"{len(curves)} curves but {len(weights)} weights")
    grid, kind = curves[0].grid, curves[0].kind
    for c in curves[1:]:
        if c.kind is not kind or len(c.grid) != len(grid) or not np.array_equal(c.grid, grid):
            raise PatternError("curves to pool must share grid and kind")
    V = np.vstack([c.values for c in curves])
    w = np.asarray(weights.weights)[:, None] * np.ones_like(V)
    missing = np.isnan(V)
    w[missing] = 0.0
    V = np.where(missing, 0.0, V)
    total = w.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        pooled = (w * V).sum(axis=0) / total
    pooled[total <= 0] = np.nan
    return SummaryCurve(grid, pooled, kind)


def pool_hierarchical(
    curves: Sequence[SummaryCurve], counts: Sequence[int], subject_ids: Sequence[str]
) -> SummaryCurve:
    """Samples -> subjects -> group, square point number weights at both levels.

    Subjects whose samples are all empty are skipped.
    """
    if not (len(curves) == len(counts) == len(subject_ids)):
        raise ValueError("curves, counts and subject_ids must have equal length")
    order: dict[str, list[int]] = {}
    for k, sid in enumerate(subject_ids):
        order.setdefault(sid, []).append(k)
    subject_curves, subject_counts = [], []
    for idx in order.values():
        n_ij = [counts[k] for k in idx]
        if sum(n_ij) == 0:
            continue
        subject_curves.append(pool_curves([curves[k] for k in idx], square_point_weights(n_ij)))
        subject_counts.append(sum(n_ij))
    if not subject_curves:
        raise ValueError("all point counts are zero")
    return pool_curves(subject_curves, square_point_weights(subject_counts))


def silverman_bandwidth(values) -> float:
    """0.9 * min(sd, IQR / 1.34) * n^(-1/5)."""
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        raise ValueError("rule-of-thumb bandwidth needs at least 2 values")
    sd = v.std(ddof=1)
    q75, q25 = np.percentile(v, [75, 25])
    spread = min(sd, (q75 - q25) / 1.34)
    if spread <= 0:
        spread = sd
    return 0.9 * spread * v.size ** (-0.2)


def _epanechnikov(t: np.ndarray, b: float) -> np.ndarray:
    u = t / b
    return np.where(np.abs(u) <= 1.0, 0.75 / b * (1.0 - u * u), 0.0)


def mark_correlation(
    mpattern: MarkedPointPattern, grid, bandwidth: float | None = None
) -> SummaryCurve:
    """Kernel estimate of the mark correlation function with test function m_i m_j.

    k(r) = sum m_i m_j w_ij / (mbar^2 sum w_ij),
    w_ij = e_b(r - d_ij) / |W_i ∩ W_j|, e_b the Epanechnikov kernel.

    Grid values with no kernel mass are NaN. The default bandwidth is the
    Silverman rule of thumb on pair distances up to the grid maximum.
    """
    grid = _check_grid(grid)
    n = len(mpattern)
    if n < 2:
        raise PatternError(f"mark correlation needs at least 2 points, got {n}")
    marks = mpattern.marks
    # equal marks must give exactly 1, which a rounded mean would spoil
    mbar = marks[0] if np.all(marks == marks[0]) else marks.mean()
    if mbar == 0:
        raise PatternError("mean mark is zero")
    window = mpattern.pattern.window
    i, j, d, dx, dy = _pairs(mpattern.pattern.xy)
    if bandwidth is None:
        near = d[d <= grid[-1]]
        bandwidth = silverman_bandwidth(near if near.size >= 2 else d)
    if not bandwidth > 0:
        raise ValueError(f"bandwidth must be positive, got {bandwidth}")
    keep = d <= grid[-1] + bandwidth
    i, j, d = i[keep], j[keep], d[keep]
    inv_area = 1.0 / window.overlap_area(dx[keep], dy[keep])
    w = _epanechnikov(grid[None, :] - d[:, None], bandwidth) * inv_area[:, None]
    u = marks / mbar
    num = ((u[i] * u[j])[:, None] * w).sum(axis=0)
    den = w.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        values = np.where(den > 0, num / den, np.nan)
    return SummaryCurve(grid, values, CurveKind.MARKCORR)


@dataclass(frozen=True)
class FConfig:
    n_test_points: int = 10_000
    grid: np.ndarray = field(default_factory=lambda: DEFAULT_GRID.copy())
    threshold: float = 0.3

    def __post_init__(self):
        if int(self.n_test_points) < 1:
            raise ValueError("n_test_points must be positive")
        object.__setattr__(self, "grid", _check_grid(self.grid))

    def check_window(self, window: Window) -> None:
        erode_window(window, float(self.grid[-1]))


def stratified_test_points(window: Window, t: int, rng) -> np.ndarray:
    """One uniform point in each of t cells of a near-square grid over ``window``."""
    gen = as_generator(rng)
    nx = max(1, int(round(np.sqrt(t * window.width / window.height))))
    ny = -(-t // nx)
    cells = nx * ny
    chosen = gen.choice(cells, size=t, replace=False) if cells > t else np.arange(t)
    cx, cy = chosen % nx, chosen // nx
    u = gen.random((t, 2))
    x = window.xmin + (cx + u[:, 0]) * (window.width / nx)
    y = window.ymin + (cy + u[:, 1]) * (window.height / ny)
    return np.column_stack([x, y])


def _nearest_distance(queries: np.ndarray, xy: np.ndarray) -> np.ndarray:
    if len(xy) > 64:
        return spatial.cKDTree(xy).query(queries)[0]
    # few data points: one vectorised pass per data point beats a KD-tree
    qx = np.ascontiguousarray(queries[:, 0])
    qy = np.ascontiguousarray(queries[:, 1])
    best = np.full(len(qx), np.inf)
    tx, ty = np.empty_like(qx), np.empty_like(qy)
    for x, y in xy:
        np.subtract(qx, x, out=tx)
        np.multiply(tx, tx, out=tx)
        np.subtract(qy, y, out=ty)
        np.multiply(ty, ty, out=ty)
        tx += ty
        np.minimum(best, tx, out=best)
    return np.sqrt(best)


def _grid_index(grid: np.ndarray, v: np.ndarray, side: str) -> np.ndarray:
    """np.searchsorted(grid, v, side), with an arithmetic shortcut for uniform grids."""
    step = grid[1] - grid[0] if len(grid) > 1 else 0.0
    if step > 0 and np.array_equal(grid, grid[0] + step * np.arange(len(grid))):
        u = (v - grid[0]) / step
        k = np.ceil(u) if side == "left" else np.floor(u) + 1
        return np.clip(k, 0, len(grid)).astype(np.intp)
    return np.searchsorted(grid, v, side=side)


def _f_values(xy: np.ndarray, window: Window, config: FConfig, gen) -> np.ndarray:
    grid = config.grid
    t = int(config.n_test_points)
    test = stratified_test_points(window, t, gen)
    b = window.boundary_distance(test)
    d = _nearest_distance(test, xy)
    G = len(grid)
    # test point i is counted at r iff r <= b_i; it is a hit iff d_i <= r <= b_i
    n_in = np.searchsorted(np.sort(b), grid, side="left")
    denom = t - n_in
    ok = d <= b
    lo = _grid_index(grid, d[ok], "left")
    hi = _grid_index(grid, b[ok], "right")
    diff = np.bincount(lo, minlength=G + 1) - np.bincount(hi, minlength=G + 1)
    hits = np.cumsum(diff)[:G]
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(denom > 0, hits / denom, np.nan)


def empty_space_F(pattern: PointPattern, config: FConfig = FConfig(), rng=0) -> SummaryCurve:
    """Empty-space function from test points in the eroded window.

    A single stratified set of ``config.n_test_points`` test points is drawn in
    W; at each r only those in W eroded by r are used. Values lie in [0, 1] but
    need not be monotone: test points near the edge drop out of the ratio as r
    grows.
    """
    config.check_window(pattern.window)
    if len(pattern) == 0:
        warnings.warn("empty pattern: F is identically 0", EmptyPatternWarning, stacklevel=2)
        return SummaryCurve(config.grid, np.zeros(len(config.grid)), CurveKind.F)
    values = _f_values(pattern.xy, pattern.window, config, as_generator(rng))
    return SummaryCurve(config.grid, values, CurveKind.F)


def first_crossing(F_values: np.ndarray, grid: np.ndarray, threshold: float) -> float:
    hit = np.flatnonzero(F_values >= threshold)
    if hit.size == 0:
        raise SummaryUndefined(
            f"F never reaches {threshold} on grid up to {grid[-1]}; summary undefined, extend grid"
        )
    return float(grid[hit[0]])


def summary_from_xy(xy: np.ndarray, window: Window, config: FConfig, gen) -> float:
    """abc_summary on raw coordinates; the hot path of reference-table generation."""
    if len(xy) == 0:
        raise SummaryUndefined("empty pattern has no F-threshold summary")
    return first_crossing(_f_values(xy, window, config, gen), config.grid, config.threshold)


def abc_summary(pattern: PointPattern, config: FConfig = FConfig(), rng=0) -> float:
    """Smallest grid r with F(r) >= threshold (0.3 by default), in microns."""
    config.check_window(pattern.window)
    return summary_from_xy(pattern.xy, pattern.window, config, as_generator(rng))
