"""Poisson and Matern cluster simulators and minimum-contrast fitting."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy import optimize

from .core import (
    CurveKind,
    Group,
    NerveSample,
    NerveTree,
    Point,
    PointPattern,
    SummaryCurve,
    Window,
    as_generator,
)


class FitError(RuntimeError):
    """Minimum contrast failed or converged to the boundary of the search box."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass(frozen=True)
class MaternParams:
    """Parent intensity (per square micron), cluster radius (microns), mean daughters."""

    kappa: float
    R: float
    mu: float
    objective: float | None = None

    def __post_init__(self):
        for name in ("kappa", "R", "mu"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"Matern {name} must be positive, got {v}")

    def to_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(asdict(self), fh, indent=2)
            fh.write("\n")

    @classmethod
    def from_json(cls, path) -> "MaternParams":
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
        return cls(float(d["kappa"]), float(d["R"]), float(d["mu"]), d.get("objective"))


# About 40 parents per default 330 x 432 window and 4.6 ends per tree.
DEFAULT_HEALTHY = MaternParams(kappa=40.0 / (330.0 * 432.0), R=25.0, mu=4.6)


def simulate_poisson(lam: float, window: Window, rng) -> PointPattern:
    """Homogeneous Poisson process with intensity ``lam`` on ``window``."""
    if not lam >= 0:
        raise ValueError(f"intensity must be nonnegative, got {lam}")
    gen = as_generator(rng)
    n = gen.poisson(lam * window.area)
    u = gen.random((n, 2))
    xy = np.column_stack(
        [window.xmin + u[:, 0] * window.width, window.ymin + u[:, 1] * window.height]
    )
    return PointPattern(xy, window)


@dataclass(frozen=True)
class MaternRealisation:
    """Raw process output: parents on the dilated window and labelled daughters."""

    parents: np.ndarray
    daughters: np.ndarray
    parent_index: np.ndarray
    window: Window

    def daughters_in_window(self) -> PointPattern:
        """Every daughter inside W regardless of where its parent lies."""
        keep = self.window.contains(self.daughters)
        return PointPattern(self.daughters[keep], self.window)


def simulate_matern_process(params: MaternParams, window: Window, rng) -> MaternRealisation:
    gen = as_generator(rng)
    outer = window.dilate(params.R)
    n_par = gen.poisson(params.kappa * outer.area)
    u = gen.random((n_par, 2))
    parents = np.column_stack(
        [outer.xmin + u[:, 0] * outer.width, outer.ymin + u[:, 1] * outer.height]
    )
    counts = gen.poisson(params.mu, size=n_par)
    total = int(counts.sum())
    # uniform in the disc: radius R*sqrt(U), angle 2*pi*V
    rad = params.R * np.sqrt(gen.random(total))
    ang = 2.0 * np.pi * gen.random(total)
    parent_index = np.repeat(np.arange(n_par), counts)
    daughters = parents[parent_index] + np.column_stack([rad * np.cos(ang), rad * np.sin(ang)])
    return MaternRealisation(parents, daughters, parent_index, window)


def simulate_matern(
    params: MaternParams,
    window: Window,
    rng,
    sample_id: str = "sim",
    subject_id: str = "sim",
    group=Group.HEALTHY,
) -> NerveSample:
    """Matern cluster sample: parents become base points, daughters end points.

    Parents are generated on W dilated by R; trees are kept for parents inside
    W, each with its daughters that fall inside W.
    """
    real = simulate_matern_process(params, window, rng)
    par_in = window.contains(real.parents)
    dau_in = window.contains(real.daughters)
    trees = []
    for tid, k in enumerate(np.flatnonzero(par_in)):
        sel = (real.parent_index == k) & dau_in
        ends = tuple(Point(float(x), float(y)) for x, y in real.daughters[sel])
        trees.append(NerveTree(tid, Point(*map(float, real.parents[k])), ends))
    return NerveSample(sample_id, subject_id, group, tuple(trees), window)


def _overlap_h(z: np.ndarray) -> np.ndarray:
    z = np.clip(np.asarray(z, dtype=float), 0.0, None)
    zc = np.minimum(z, 1.0)
    s = np.sqrt(1.0 - zc * zc)
    h = 2.0 + ((8 * zc * zc - 4) * np.arccos(zc) - 2 * np.arcsin(zc) + 4 * zc * s**3 - 6 * zc * s) / np.pi
    return np.where(z >= 1.0, 1.0, h)


def matern_K(params: MaternParams, r) -> np.ndarray | float:
    """K(r) = pi r^2 + h(r / 2R) / kappa for the Matern cluster process."""
    r_arr = np.asarray(r, dtype=float)
    if np.any(r_arr < 0):
        raise ValueError("r must be nonnegative")
    out = np.pi * r_arr**2 + _overlap_h(r_arr / (2.0 * params.R)) / params.kappa
    return float(out) if out.ndim == 0 else out


def _model_K(log_kappa, log_R, r):
    return np.pi * r**2 + _overlap_h(r / (2.0 * np.exp(log_R))) * np.exp(-log_kappa)


def fit_matern_mincontrast(
    K_curve: SummaryCurve,
    mu_hint: float,
    q: float = 0.25,
    rmin: float = 1.0,
    rmax: float = 100.0,
    kappa_bounds: tuple[float, float] | None = None,
    R_bounds: tuple[float, float] | None = None,
) -> MaternParams:
    """Minimum contrast fit of (kappa, R) to an estimated K function.

    Minimises sum over the grid of (K_hat^q - K_model^q)^2 on [rmin, rmax],
    first on a log-spaced grid and then with Nelder-Mead. ``mu`` is taken from
    ``mu_hint``. Raises :class:`FitError` when the optimum sits on the edge of
    the search box (e.g. an unclustered, Poisson-like K).
    """
    if K_curve.kind is not CurveKind.K:
        raise ValueError("minimum contrast needs a K curve")
    sel = (K_curve.grid >= rmin) & (K_curve.grid <= rmax) & np.isfinite(K_curve.values)
    r, K = K_curve.grid[sel], K_curve.values[sel]
    if r.size < 10:
        raise ValueError(f"need at least 10 grid points in [{rmin}, {rmax}], got {r.size}")
    target = np.clip(K, 0.0, None) ** q

    if R_bounds is None:
        R_bounds = (r[0] / 4.0, r[-1] * 2.0)
    if kappa_bounds is None:
        # between one cluster per (100 rmax)^2 and one per rmin^2
        kappa_bounds = (1.0 / (100.0 * r[-1]) ** 2, 1.0 / r[0] ** 2)
    lk_lo, lk_hi = np.log(kappa_bounds[0]), np.log(kappa_bounds[1])
    lR_lo, lR_hi = np.log(R_bounds[0]), np.log(R_bounds[1])

    def objective(theta):
        lk = np.clip(theta[0], lk_lo, lk_hi)
        lR = np.clip(theta[1], lR_lo, lR_hi)
        penalty = (theta[0] - lk) ** 2 + (theta[1] - lR) ** 2
        return float(np.sum((_model_K(lk, lR, r) ** q - target) ** 2)) + 1e3 * penalty

    lk_grid = np.linspace(lk_lo, lk_hi, 41)
    lR_grid = np.linspace(lR_lo, lR_hi, 41)
    vals = np.array([[objective((a, b)) for b in lR_grid] for a in lk_grid])
    ia, ib = np.unravel_index(np.argmin(vals), vals.shape)
    res = optimize.minimize(
        objective,
        x0=np.array([lk_grid[ia], lR_grid[ib]]),
        method="Nelder-Mead",
        options={"xatol": 1e-10, "fatol": 1e-8 * max(vals.min(), 1e-12), "maxiter": 20000},
    )
    lk, lR = res.x
    diag = {
        "kappa": float(np.exp(lk)),
        "R": float(np.exp(lR)),
        "objective": float(res.fun),
        "nit": int(res.nit),
        "message": str(res.message),
    }
    span_k, span_R = lk_hi - lk_lo, lR_hi - lR_lo
    if (
        min(lk - lk_lo, lk_hi - lk) < 1e-3 * span_k
        or min(lR - lR_lo, lR_hi - lR) < 1e-3 * span_R
    ):
        raise FitError("minimum contrast optimum lies on the search boundary", diag)
    if not res.success and res.status != 2:
        raise FitError(f"optimizer failed: {res.message}", diag)
    return MaternParams(float(np.exp(lk)), float(np.exp(lR)), float(mu_hint), float(res.fun))
