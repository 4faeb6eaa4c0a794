"""Rejection ABC for the dependent-thinning parameter theta.

The reference table is the prior predictive sample: each row draws theta from
the prior, a healthy pattern uniformly from those eligible for the target's
tree count, thins it and records the F-threshold summary of the surviving
base points. Acceptance keeps the rows whose summary is closest to the
observed one.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import RngSpec, SampleSet, Window, as_generator
from .io import fmt
from .summaries import DEFAULT_GRID, FConfig, SummaryUndefined, summary_from_xy
from .thinning import dependent_thin_indices, eligible_healthy


class EligibilityError(ValueError):
    """A target has no healthy pattern with enough trees."""


class AcceptanceError(ValueError):
    pass


@dataclass(frozen=True)
class PriorSpec:
    """Exponential(rate) conditioned on theta > trunc_low.

    ``family="uniform"`` gives Uniform(trunc_low, high) instead.
    """

    family: str = "exponential"
    rate: float = 10.0
    trunc_low: float = 0.01
    high: float | None = None

    def __post_init__(self):
        if self.family not in ("exponential", "uniform"):
            raise ValueError(f"unknown prior family {self.family!r}")
        if not self.trunc_low >= 0:
            raise ValueError("trunc_low must be >= 0")
        if self.family == "exponential" and not self.rate > 0:
            raise ValueError("exponential rate must be positive")
        if self.family == "uniform" and not (self.high is not None and self.high > self.trunc_low):
            raise ValueError("uniform prior needs high > trunc_low")

    def pdf(self, theta) -> np.ndarray:
        t = np.asarray(theta, dtype=float)
        if self.family == "uniform":
            return np.where((t > self.trunc_low) & (t < self.high), 1 / (self.high - self.trunc_low), 0.0)
        return np.where(t > self.trunc_low, self.rate * np.exp(-self.rate * (t - self.trunc_low)), 0.0)


def sample_prior(prior: PriorSpec, n: int, rng) -> np.ndarray:
    """``n`` i.i.d. draws; the truncated exponential is a shifted exponential."""
    if n < 1:
        raise ValueError("n must be >= 1")
    gen = as_generator(rng)
    if prior.family == "uniform":
        draws = prior.trunc_low + (prior.high - prior.trunc_low) * gen.random(n)
    else:
        draws = prior.trunc_low + gen.exponential(1.0 / prior.rate, n)
    # keep the support open at trunc_low
    return np.where(draws > prior.trunc_low, draws, np.nextafter(prior.trunc_low, np.inf))


@dataclass(frozen=True)
class ABCConfig:
    n_sims: int = 100_000
    accept_quantile: float | None = 0.001
    f_threshold: float = 0.3
    epsilon: float | None = None
    n_test_points: int = 10_000
    grid: np.ndarray = field(default_factory=lambda: DEFAULT_GRID.copy())

    def __post_init__(self):
        if self.n_sims < 1:
            raise ValueError("n_sims must be positive")
        if (self.accept_quantile is None) == (self.epsilon is None):
            raise ValueError("exactly one of accept_quantile and epsilon must be set")
        if self.accept_quantile is not None and not 0 < self.accept_quantile < 1:
            raise ValueError("accept_quantile must lie in (0, 1)")
        if self.epsilon is not None and not self.epsilon > 0:
            raise ValueError("epsilon must be positive")

    def f_config(self) -> FConfig:
        return FConfig(self.n_test_points, self.grid, self.f_threshold)


TABLE_HEADER = ["theta", "target_id", "healthy_id", "summary", "seed", "valid"]


@dataclass(frozen=True)
class ReferenceTable:
    theta: np.ndarray
    target_id: np.ndarray
    healthy_id: np.ndarray
    summary: np.ndarray
    seed: np.ndarray
    valid: np.ndarray

    def __len__(self) -> int:
        return len(self.theta)

    def for_target(self, target_id: str) -> "ReferenceTable":
        sel = self.target_id == target_id
        return ReferenceTable(*(getattr(self, f)[sel] for f in TABLE_HEADER))

    @property
    def invalid_fraction(self) -> float:
        return float(1.0 - self.valid.mean()) if len(self) else 0.0

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TABLE_HEADER)
            for k in range(len(self)):
                w.writerow(
                    [fmt(self.theta[k]), self.target_id[k], self.healthy_id[k],
                     fmt(self.summary[k]), int(self.seed[k]), int(self.valid[k])]
                )

    @classmethod
    def from_csv(cls, path) -> "ReferenceTable":
        cols: dict[str, list] = {h: [] for h in TABLE_HEADER}
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != TABLE_HEADER:
                raise ValueError(f"{path}: header must be {','.join(TABLE_HEADER)}")
            for row in reader:
                for h in TABLE_HEADER:
                    cols[h].append(row[h])
        return cls(
            np.array(cols["theta"], dtype=float),
            np.array(cols["target_id"], dtype=object),
            np.array(cols["healthy_id"], dtype=object),
            np.array([float(v) if v else np.nan for v in cols["summary"]]),
            np.array([int(v) for v in cols["seed"]], dtype=np.uint64),
            np.array([v == "1" for v in cols["valid"]], dtype=bool),
        )


@dataclass(frozen=True)
class PosteriorDraws:
    target_id: str
    thetas: np.ndarray
    threshold: float = float("nan")
    n_table: int = 0
    invalid_fraction: float = 0.0

    def __len__(self):
        return len(self.thetas)


def simulate_row(
    bases: Sequence[np.ndarray],
    window: Window,
    n_B: int,
    prior: PriorSpec,
    f_config: FConfig,
    row_seed: int,
):
    """One prior-predictive draw: (theta, healthy index, summary or NaN)."""
    gen = RngSpec(row_seed).generator()
    theta = float(sample_prior(prior, 1, gen)[0])
    j = int(gen.integers(len(bases)))
    keep = dependent_thin_indices(bases[j], theta, n_B, gen)
    try:
        s = summary_from_xy(bases[j][keep], window, f_config, gen)
    except SummaryUndefined:
        s = float("nan")
    return theta, j, s


def _rows_chunk(args):
    bases, window, n_B, prior, f_config, seeds = args
    out = np.empty((len(seeds), 3))
    for k, seed in enumerate(seeds):
        out[k] = simulate_row(bases, window, n_B, prior, f_config, int(seed))
    return out


def row_seeds(rng: RngSpec, n_B: int, n: int) -> np.ndarray:
    return np.array([rng.child(n_B, i).base_seed for i in range(n)], dtype=np.uint64)


def _default_workers() -> int:
    return max(1, os.cpu_count() or 1)


def build_reference_table(
    healthy: SampleSet,
    targets: Sequence[tuple[str, int]],
    prior: PriorSpec,
    config: ABCConfig,
    rng: RngSpec,
    workers: int | None = None,
    chunk_size: int = 2000,
) -> ReferenceTable:
    """Prior predictive reference table, ``config.n_sims`` rows per target.

    Row ``i`` for tree count ``n_B`` is seeded by ``rng.child(n_B, i)``, so the
    table does not depend on ``workers``, and targets sharing ``n_B`` share
    their simulations.
    """
    if not isinstance(rng, RngSpec):
        rng = RngSpec(int(rng))
    healthy_list = list(healthy)
    windows = {s.window for s in healthy_list}
    if len(windows) != 1:
        raise ValueError("healthy patterns must share one window")
    window = windows.pop()
    f_config = config.f_config()
    f_config.check_window(window)
    by_id = {s.sample_id: k for k, s in enumerate(healthy_list)}

    eligible: dict[int, list[int]] = {}
    for target_id, n_B in targets:
        if n_B in eligible:
            continue
        ids = eligible_healthy(healthy, n_B)
        if not ids:
            raise EligibilityError(
                f"target {target_id}: no healthy pattern has at least {n_B + 5} trees"
            )
        eligible[n_B] = [by_id[i] for i in ids]

    workers = workers or _default_workers()
    results: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    for n_B, idx in eligible.items():
        bases = [healthy_list[k].bases_xy() for k in idx]
        seeds = row_seeds(rng, n_B, config.n_sims)
        chunks = [
            (bases, window, n_B, prior, f_config, seeds[a : a + chunk_size])
            for a in range(0, len(seeds), chunk_size)
        ]
        if workers > 1 and len(chunks) > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                parts = list(pool.map(_rows_chunk, chunks))
        else:
            parts = [_rows_chunk(c) for c in chunks]
        results[n_B] = (np.vstack(parts), seeds)

    theta, tid, hid, summ, seed = [], [], [], [], []
    for target_id, n_B in targets:
        rows, seeds = results[n_B]
        idx = eligible[n_B]
        theta.append(rows[:, 0])
        tid.append(np.full(len(rows), target_id, dtype=object))
        hid.append(np.array([healthy_list[idx[int(j)]].sample_id for j in rows[:, 1]], dtype=object))
        summ.append(rows[:, 2])
        seed.append(seeds)
    summary = np.concatenate(summ)
    return ReferenceTable(
        np.concatenate(theta),
        np.concatenate(tid),
        np.concatenate(hid),
        summary,
        np.concatenate(seed),
        np.isfinite(summary),
    )


def abc_accept(
    table: ReferenceTable, observed_summary: float, config: ABCConfig, target_id: str | None = None
) -> PosteriorDraws:
    """Accept table rows by distance |summary - observed|.

    Quantile mode keeps every valid row whose distance is at most the
    ceil(q * n)-th smallest distance (ties at the cut-off are all kept).
    Epsilon mode keeps rows with distance strictly below epsilon.
    Invalid rows never enter the quantile.
    """
    if target_id is not None:
        table = table.for_target(target_id)
    elif len(set(table.target_id)) > 1:
        raise ValueError("table holds several targets; pass target_id")
    if len(table) == 0:
        raise AcceptanceError("empty reference table")
    if not np.isfinite(observed_summary):
        raise AcceptanceError("observed summary must be finite")
    tid = str(target_id if target_id is not None else table.target_id[0])
    valid = table.valid
    if not valid.any():
        raise AcceptanceError(f"target {tid}: no valid rows in the reference table")
    dist = np.abs(table.summary[valid] - observed_summary)
    thetas = table.theta[valid]
    if config.epsilon is not None:
        threshold = float(config.epsilon)
        accepted = dist < threshold
        if not accepted.any():
            raise AcceptanceError(
                f"target {tid}: no rows within epsilon={threshold}; use quantile mode"
            )
    else:
        k = max(1, math.ceil(config.accept_quantile * len(dist)))
        threshold = float(np.partition(dist, k - 1)[k - 1])
        accepted = dist <= threshold
    return PosteriorDraws(tid, thetas[accepted], threshold, len(table), table.invalid_fraction)


def posterior_summary(draws: PosteriorDraws, min_draws: int = 20) -> dict:
    """Median and central 95% interval of the accepted thetas."""
    if len(draws) < min_draws:
        raise ValueError(f"need at least {min_draws} draws, got {len(draws)}")
    lo, med, hi = np.quantile(draws.thetas, [0.025, 0.5, 0.975])
    return {"median": float(med), "ci95": (float(lo), float(hi))}


def write_posteriors(draws: Sequence[PosteriorDraws], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["target_id", "theta"])
        for d in draws:
            for t in d.thetas:
                w.writerow([d.target_id, fmt(t)])


def read_posteriors(path) -> dict[str, PosteriorDraws]:
    out: dict[str, list[float]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["target_id", "theta"]:
            raise ValueError(f"{path}: header must be target_id,theta")
        for row in reader:
            out.setdefault(row["target_id"], []).append(float(row["theta"]))
    return {k: PosteriorDraws(k, np.array(v)) for k, v in out.items()}
