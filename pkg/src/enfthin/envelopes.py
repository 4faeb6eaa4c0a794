"""Global envelopes (extreme rank length), bootstrap envelopes and
posterior predictive bands for group-level summary curves."""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .abc import EligibilityError, PosteriorDraws
from .core import (
    CurveKind,
    MarkedPointPattern,
    NerveSample,
    PatternError,
    PointPattern,
    RngSpec,
    SampleSet,
    SummaryCurve,
    as_generator,
)
from .summaries import (
    DEFAULT_GRID,
    centered_L,
    estimate_K,
    mark_correlation,
    pool_curves,
    pool_hierarchical,
    square_point_weights,
)
from .territory import ecdf_curve, sample_territories
from .thinning import dependent_thin, eligible_healthy, p_thin_endpoints, p_thin_trees


class FewCurvesWarning(UserWarning):
    pass


@dataclass(frozen=True)
class CurveEnsemble:
    curves: tuple[SummaryCurve, ...]

    def __post_init__(self):
        curves = tuple(self.curves)
        object.__setattr__(self, "curves", curves)
        if len(curves) < 2:
            raise ValueError("an ensemble needs at least 2 curves")
        g = curves[0].grid
        for c in curves[1:]:
            if len(c.grid) != len(g) or not np.array_equal(c.grid, g):
                raise PatternError("ensemble curves must share one grid")

    @property
    def grid(self) -> np.ndarray:
        return self.curves[0].grid

    @property
    def kind(self) -> CurveKind:
        return self.curves[0].kind

    def matrix(self) -> np.ndarray:
        return np.vstack([c.values for c in self.curves])

    def __len__(self):
        return len(self.curves)


@dataclass(frozen=True)
class Envelope:
    grid: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    alpha: float
    observed: SummaryCurve | None = None
    valid: np.ndarray | None = None
    n_curves: int = 0
    few_curves: bool = False

    def exits(self, values) -> np.ndarray:
        """Grid indices (within the valid sub-grid) where ``values`` leave the band."""
        v = np.asarray(values, dtype=float)
        mask = self.valid if self.valid is not None else np.ones(len(self.grid), bool)
        out = mask & ((v < self.lo) | (v > self.hi))
        return np.flatnonzero(out)

    def contains(self, values) -> bool:
        return self.exits(values).size == 0

    @property
    def observed_exits(self) -> np.ndarray:
        if self.observed is None:
            raise ValueError("envelope has no observed curve")
        return self.exits(self.observed.values)


def pointwise_ranks(M: np.ndarray) -> np.ndarray:
    """Two-sided pointwise ranks min(rank from below, rank from above), mid-ranks for ties."""
    s = M.shape[0]
    low = stats.rankdata(M, axis=0, method="average")
    return np.minimum(low, s + 1 - low)


def erl_rank(ensemble: CurveEnsemble | np.ndarray) -> np.ndarray:
    """Ordering keys: each curve's pointwise two-sided ranks sorted ascending.

    Keys compare lexicographically; a smaller key is a more extreme curve.
    """
    M = ensemble.matrix() if isinstance(ensemble, CurveEnsemble) else np.asarray(ensemble, float)
    return np.sort(pointwise_ranks(M), axis=1)


def erl_measure(keys: np.ndarray) -> np.ndarray:
    """E_i = #{j : key_j <= key_i} / s (lexicographic); small E is extreme."""
    s = len(keys)
    _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    at_most = np.cumsum(counts)
    return at_most[np.asarray(inverse).ravel()] / s


def erl_central_set(E: np.ndarray, alpha: float) -> np.ndarray:
    """Boolean mask of I_alpha: curves at most as extreme as E_(alpha)."""
    s = len(E)
    cut = None
    for e in np.unique(E)[::-1]:
        if np.sum(E < e) <= alpha * s:
            cut = e
            break
    if cut is None:
        cut = E.min()
    return E >= cut


def global_envelope(
    ensemble: CurveEnsemble, alpha: float = 0.05, observed: SummaryCurve | None = None
) -> Envelope:
    """100(1 - alpha)% ERL global envelope.

    With ``observed`` the data curve joins the ranking. Grid points where any
    curve is missing are left out of the ranking and of the envelope.
    """
    if not 0 <= alpha < 1:
        raise ValueError("alpha must lie in [0, 1)")
    M = ensemble.matrix()
    if observed is not None:
        if not np.array_equal(observed.grid, ensemble.grid):
            raise PatternError("observed curve grid differs from the ensemble grid")
        M = np.vstack([M, observed.values[None, :]])
    valid = ~np.isnan(M).any(axis=0)
    if not valid.any():
        raise PatternError("no grid point is valid in every curve")
    s = M.shape[0]
    few = alpha > 0 and s < 2.0 / alpha
    if few:
        warnings.warn(
            f"{s} curves are few for alpha={alpha}; at least {math.ceil(2 / alpha)} recommended",
            FewCurvesWarning,
            stacklevel=2,
        )
    Mv = M[:, valid]
    keep = erl_central_set(erl_measure(erl_rank(Mv)), alpha)
    lo = np.full(M.shape[1], np.nan)
    hi = np.full(M.shape[1], np.nan)
    lo[valid] = Mv[keep].min(axis=0)
    hi[valid] = Mv[keep].max(axis=0)
    return Envelope(ensemble.grid, lo, hi, alpha, observed, valid, s, few)


def bootstrap_pointwise_envelope(
    subject_curves: Sequence[SummaryCurve],
    subject_counts: Sequence[int],
    alpha: float = 0.05,
    B: int = 2000,
    rng=0,
) -> Envelope:
    """Pointwise percentile envelope of the group curve under subject resampling."""
    if len(subject_curves) < 2:
        raise ValueError("bootstrap envelope needs at least 2 subjects")
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    gen = as_generator(rng)
    n = len(subject_curves)
    counts = np.asarray(subject_counts)
    reps = np.empty((B, len(subject_curves[0].grid)))
    for b in range(B):
        pick = gen.integers(n, size=n)
        if counts[pick].sum() == 0:
            pick = np.arange(n)
        reps[b] = pool_curves(
            [subject_curves[k] for k in pick], square_point_weights(counts[pick])
        ).values
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        lo = np.nanquantile(reps, alpha / 2, axis=0)
        hi = np.nanquantile(reps, 1 - alpha / 2, axis=0)
    return Envelope(subject_curves[0].grid, lo, hi, alpha, None, ~np.isnan(lo), B)


# --- group statistics -------------------------------------------------------


@dataclass(frozen=True)
class GroupStatistic:
    """Per-sample curve plus the point count used for square point number weights."""

    name: str
    per_sample: Callable[[NerveSample, np.ndarray], tuple[SummaryCurve, int]]
    kind: CurveKind
    finalize: Callable[[SummaryCurve], SummaryCurve] = field(default=lambda c: c)

    def group_curve(self, samples: Sequence[NerveSample], grid, subject_ids=None) -> SummaryCurve:
        subject_ids = subject_ids or [s.subject_id for s in samples]
        parts = [self.per_sample(s, grid) for s in samples]
        pooled = pool_hierarchical([p[0] for p in parts], [p[1] for p in parts], subject_ids)
        return self.finalize(pooled)


def _missing(grid, kind) -> SummaryCurve:
    return SummaryCurve(grid, np.full(len(grid), np.nan), kind)


def _k_of(pattern_fn):
    def per_sample(sample, grid):
        pattern = pattern_fn(sample)
        if len(pattern) < 2:
            return _missing(grid, CurveKind.K), 0
        return estimate_K(pattern, grid), len(pattern)

    return per_sample


def _markcorr(sample, grid):
    idx, sizes = sample_territories(sample)
    # the rule-of-thumb bandwidth needs at least two pair distances
    if len(idx) < 3:
        return _missing(grid, CurveKind.MARKCORR), 0
    pattern = PointPattern(sample.bases_xy()[idx], sample.window)
    return mark_correlation(MarkedPointPattern(pattern, sizes), grid), len(idx)


def _ecdf_size(sample, grid):
    if sample.n_trees == 0:
        return _missing(grid, CurveKind.ECDF), 0
    return ecdf_curve([t.n_ends for t in sample.trees], grid), sample.n_trees


def _ecdf_area(sample, grid):
    _, sizes = sample_territories(sample)
    if sample.n_trees == 0:
        return _missing(grid, CurveKind.ECDF), 0
    return ecdf_curve([sizes.sum()], grid), sample.n_trees


STATISTICS = {
    "L-ends": GroupStatistic("L-ends", _k_of(lambda s: s.end_pattern()), CurveKind.K, centered_L),
    "L-bases": GroupStatistic("L-bases", _k_of(lambda s: s.base_pattern()), CurveKind.K, centered_L),
    "markcorr": GroupStatistic("markcorr", _markcorr, CurveKind.MARKCORR),
    "ecdf-size": GroupStatistic("ecdf-size", _ecdf_size, CurveKind.ECDF),
    "ecdf-area": GroupStatistic("ecdf-area", _ecdf_area, CurveKind.ECDF),
}


def get_statistic(name: str) -> GroupStatistic:
    try:
        return STATISTICS[name]
    except KeyError:
        raise ValueError(
            f"unknown statistic {name!r}; choose one of {', '.join(STATISTICS)}"
        ) from None


def default_grid(statistic: str, healthy: SampleSet) -> np.ndarray:
    """Evaluation grid for a statistic, fixed by the healthy data where needed."""
    if statistic == "ecdf-size":
        top = max((t.n_ends for s in healthy for t in s.trees), default=1)
        return np.arange(0.0, top + 1.0)
    if statistic == "ecdf-area":
        top = max((sample_territories(s)[1].sum() for s in healthy), default=1.0)
        return np.linspace(0.0, float(top), 101)
    return DEFAULT_GRID.copy()


# --- posterior predictive bands ---------------------------------------------


@dataclass(frozen=True)
class Target:
    target_id: str
    n_B: int
    draws: PosteriorDraws
    subject_id: str | None = None


def _eligible_samples(healthy: SampleSet, targets: Sequence[Target]) -> list[list[NerveSample]]:
    out = []
    for t in targets:
        ids = set(eligible_healthy(healthy, t.n_B))
        if not ids:
            raise EligibilityError(
                f"target {t.target_id}: no healthy pattern has at least {t.n_B + 5} trees"
            )
        out.append([s for s in healthy if s.sample_id in ids])
    return out


def predictive_replicate(
    pools: Sequence[Sequence[NerveSample]],
    targets: Sequence[Target],
    statistic: GroupStatistic,
    grid: np.ndarray,
    rng: RngSpec,
) -> SummaryCurve:
    """One group curve from the posterior predictive distribution."""
    thinned = []
    for i, (t, pool) in enumerate(zip(targets, pools)):
        gen = rng.child(i).generator()
        theta = float(t.draws.thetas[gen.integers(len(t.draws))])
        healthy = pool[int(gen.integers(len(pool)))]
        thinned.append(dependent_thin(healthy, theta, t.n_B, gen))
    subjects = [t.subject_id or t.target_id for t in targets]
    return statistic.group_curve(thinned, grid, subjects)


def _replicate_chunk(args):
    pools, targets, stat_name, grid, seeds = args
    statistic = get_statistic(stat_name)
    return [
        predictive_replicate(pools, targets, statistic, grid, RngSpec(int(s))).values
        for s in seeds
    ]


def _run_replicates(pools, targets, stat_name, grid, seeds, workers, chunk_size=100):
    chunks = [
        (pools, targets, stat_name, grid, seeds[a : a + chunk_size])
        for a in range(0, len(seeds), chunk_size)
    ]
    if workers and workers > 1 and len(chunks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_replicate_chunk, chunks))
    else:
        parts = [_replicate_chunk(c) for c in chunks]
    return [v for part in parts for v in part]


def posterior_predictive_band(
    healthy: SampleSet,
    targets: Sequence[Target],
    statistic: str,
    n_sim: int = 2500,
    alpha: float = 0.05,
    rng: RngSpec = RngSpec(0),
    grid=None,
    observed: SummaryCurve | None = None,
    workers: int = 1,
) -> Envelope:
    """Global envelope of group curves simulated from the posterior predictive.

    Every replicate draws, for each target, a theta from its posterior draws
    and an eligible healthy pattern, thins it to the target's tree count and
    pools the per-target curves with square point number weights.
    """
    stat = get_statistic(statistic)
    if not isinstance(rng, RngSpec):
        rng = RngSpec(int(rng))
    for t in targets:
        if len(t.draws) == 0:
            raise ValueError(f"target {t.target_id}: empty posterior")
    grid = default_grid(statistic, healthy) if grid is None else np.asarray(grid, float)
    pools = _eligible_samples(healthy, targets)
    seeds = [rng.child(s).base_seed for s in range(n_sim)]
    values = _run_replicates(pools, list(targets), statistic, grid, seeds, workers)
    kind = CurveKind.L_CENTERED if statistic.startswith("L-") else stat.kind
    curves = [SummaryCurve(grid, v, kind) for v in values]
    return global_envelope(CurveEnsemble(curves), alpha, observed)


def p_thinning_band(
    healthy: SampleSet,
    p: float,
    mode: str,
    statistic: str,
    n_sim: int = 2500,
    alpha: float = 0.05,
    rng: RngSpec = RngSpec(0),
    grid=None,
    observed: SummaryCurve | None = None,
) -> Envelope:
    """Global envelope for independent p-thinning of every healthy sample.

    ``mode`` is ``"ends"`` (thin end points) or ``"trees"`` (thin whole trees).
    """
    stat = get_statistic(statistic)
    thin = {"ends": p_thin_endpoints, "trees": p_thin_trees}[mode]
    if not isinstance(rng, RngSpec):
        rng = RngSpec(int(rng))
    grid = default_grid(statistic, healthy) if grid is None else np.asarray(grid, float)
    samples = list(healthy)
    curves = []
    for s in range(n_sim):
        base = rng.child(s)
        thinned = [thin(h, p, base.child(k)) for k, h in enumerate(samples)]
        curves.append(stat.group_curve(thinned, grid))
    return global_envelope(CurveEnsemble(curves), alpha, observed)
