"""Independent and dependent thinning of nerve-tree samples.

The dependent model removes whole trees one at a time. At each step every
remaining base point is marked with the distance m to its nearest remaining
base point, and one tree is removed with probability proportional to
1 - exp(-theta^2 m^2), so isolated trees go first when theta is small and
removal approaches uniform as theta grows.
"""

from __future__ import annotations

import logging

import numpy as np

from .core import NerveSample, NerveTree, PatternError, SampleSet, as_generator

logger = logging.getLogger(__name__)


def _check_p(p: float) -> None:
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"retention probability must lie in [0, 1], got {p}")


def estimate_retention_p(target_group: SampleSet, source_group: SampleSet, points: str = "trees"):
    """Ratio of mean intensities, target over source.

    ``points`` selects what is counted: ``"trees"`` (base points) or ``"ends"``.
    Returns ``(p_hat, clamped)`` where ``p_hat`` is capped at 1 and ``clamped``
    reports whether the raw ratio exceeded 1.
    """
    if len(target_group) == 0 or len(source_group) == 0:
        raise ValueError("both groups must be nonempty")

    def intensity(group):
        attr = "n_trees" if points == "trees" else "n_ends"
        n = sum(getattr(s, attr) for s in group)
        return n / sum(s.window.area for s in group)

    src = intensity(source_group)
    if src == 0:
        raise ValueError("source group has no points")
    ratio = intensity(target_group) / src
    if ratio > 1:
        logger.warning("retention ratio %.4f exceeds 1; clamped", ratio)
    return min(ratio, 1.0), ratio > 1


def p_thin_endpoints(sample: NerveSample, p: float, rng) -> NerveSample:
    """Keep each end point independently with probability ``p``."""
    _check_p(p)
    gen = as_generator(rng)
    trees = []
    for t in sample.trees:
        keep = gen.random(t.n_ends) < p
        trees.append(NerveTree(t.tree_id, t.base, tuple(e for e, k in zip(t.ends, keep) if k)))
    return sample.with_trees(trees)


def p_thin_trees(sample: NerveSample, p: float, rng) -> NerveSample:
    """Keep each whole tree independently with probability ``p``."""
    _check_p(p)
    keep = as_generator(rng).random(sample.n_trees) < p
    return sample.with_trees([t for t, k in zip(sample.trees, keep) if k])


def thin_trees_to_count(sample: NerveSample, n_B: int, rng) -> NerveSample:
    """Keep a uniformly random subset of exactly ``n_B`` trees."""
    if not 0 <= n_B <= sample.n_trees:
        raise ValueError(f"cannot keep {n_B} of {sample.n_trees} trees")
    idx = np.sort(as_generator(rng).choice(sample.n_trees, size=n_B, replace=False))
    return sample.with_trees([sample.trees[i] for i in idx])


def removal_weights(marks: np.ndarray, theta: float) -> np.ndarray:
    """Normalised removal weights (1 - exp(-theta^2 m^2)) / sum.

    Falls back to uniform, with a warning, when every weight underflows to 0.
    """
    raw = -np.expm1(-(theta * theta) * marks * marks)
    total = raw.sum()
    if not total > 0:
        logger.warning("all removal weights underflow at theta=%g; removing uniformly", theta)
        return np.full(len(marks), 1.0 / len(marks))
    return raw / total


def dependent_thin_indices(bases_xy: np.ndarray, theta: float, n_B: int, gen) -> np.ndarray:
    """Indices (ascending) of the base points that survive dependent thinning.

    Nearest-neighbour marks are recomputed among the surviving bases before
    every removal.
    """
    n = len(bases_xy)
    if not theta > 0:
        raise ValueError(f"theta must be positive, got {theta}")
    if not 0 <= n_B < n:
        raise ValueError(f"n_B={n_B} must be below the current tree count {n}")
    if n_B < 1 and n < 2:
        raise PatternError("dependent thinning needs at least 2 trees")
    diff = bases_xy[:, None, :] - bases_xy[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=-1))
    np.fill_diagonal(dist, np.inf)
    alive = np.arange(n)
    while len(alive) > n_B:
        if len(alive) < 2:
            raise PatternError("dependent thinning needs at least 2 trees per step")
        # removed trees have their column set to inf, so this is the full
        # nearest-neighbour mark among the surviving bases
        marks = dist[alive].min(axis=1)
        f = removal_weights(marks, theta)
        cdf = np.cumsum(f)
        l = min(int(np.searchsorted(cdf, gen.random() * cdf[-1], side="right")), len(alive) - 1)
        dist[:, alive[l]] = np.inf
        alive = np.delete(alive, l)
    return alive


def dependent_thin(sample: NerveSample, theta: float, n_B: int, rng) -> NerveSample:
    """Remove trees one at a time until ``n_B`` remain (model M(theta | B, n_B)).

    Each removal takes the base point and all of its end points.
    """
    if not theta > 0:
        raise ValueError(f"theta must be positive, got {theta}")
    if not 0 <= n_B < sample.n_trees:
        raise ValueError(f"n_B={n_B} must be below the tree count {sample.n_trees}")
    keep = dependent_thin_indices(sample.bases_xy(), theta, n_B, as_generator(rng))
    return sample.with_trees([sample.trees[i] for i in keep])


def eligible_healthy(healthy: SampleSet, n_B: int, margin: int = 5) -> list[str]:
    """Sample ids with at least ``n_B + margin`` trees."""
    return [s.sample_id for s in healthy if s.n_trees >= n_B + margin]
