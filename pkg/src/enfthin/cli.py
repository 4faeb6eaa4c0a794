"""Command-line driver: simulate -> thin -> infer -> envelope -> report.

Exit codes: 0 success, 2 usage error, 3 data or eligibility error,
4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import abc as abcmod
from .core import Group, NerveSample, NerveTree, PatternError, Point, RngSpec, SampleSet, Window
from .envelopes import STATISTICS, Target, default_grid, get_statistic, posterior_predictive_band
from .io import (
    FileFormatError,
    fmt,
    load_sample_dir,
    load_window,
    save_sample_set,
)
from .plot import envelope_svg
from .simulate import (
    DEFAULT_HEALTHY,
    FitError,
    MaternParams,
    fit_matern_mincontrast,
    simulate_matern,
    simulate_poisson,
)
from .summaries import FConfig, SummaryUndefined, abc_summary, estimate_K, pool_hierarchical
from .thinning import dependent_thin, p_thin_endpoints, p_thin_trees, thin_trees_to_count

log = logging.getLogger("enfthin")

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4


class UsageError(Exception):
    pass


def _write_json(obj, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _threads(args) -> int:
    return args.threads if args.threads else max(1, os.cpu_count() or 1)


def _window(args) -> Window:
    return load_window(args.window) if getattr(args, "window", None) else Window()


# --- simulate ---------------------------------------------------------------


def cmd_simulate(args) -> None:
    if args.n_reps < 1:
        raise UsageError("--n-reps must be at least 1")
    window = _window(args)
    params = {}
    if args.params:
        with open(args.params, encoding="utf-8") as fh:
            params = json.load(fh)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = RngSpec(args.seed)
    files = []
    for k in range(args.n_reps):
        child = rng.child(k)
        sample_id = f"{args.prefix}{k:04d}"
        subject_id = f"{args.prefix}subj{k // args.samples_per_subject:04d}"
        if args.model == "poisson":
            lam = float(params.get("lambda", 40.0 / window.area))
            pattern = simulate_poisson(lam, window, child)
            trees = [NerveTree(i, Point(float(x), float(y))) for i, (x, y) in enumerate(pattern.xy)]
            sample = NerveSample(sample_id, subject_id, args.group, trees, window)
        else:
            p = MaternParams.from_json(args.params) if args.params else DEFAULT_HEALTHY
            sample = simulate_matern(p, window, child, sample_id, subject_id, args.group)
        name = f"{sample_id}.csv"
        save_sample_set(SampleSet([sample]), out / name)
        files.append({"file": name, "seed": child.base_seed, "n_trees": sample.n_trees,
                      "n_ends": sample.n_ends})
    _write_json(
        {"command": "simulate", "model": args.model, "params": params, "seed": args.seed,
         "window": window.to_dict(), "files": files},
        out / "manifest.json",
    )


# --- fit --------------------------------------------------------------------


def cmd_fit(args) -> None:
    samples = load_sample_dir(args.healthy)
    grid = np.arange(0.0, args.rmax + 1.0)
    curves, counts, subjects = [], [], []
    for s in samples:
        ends = s.end_pattern()
        if len(ends) < 2:
            continue
        curves.append(estimate_K(ends, grid))
        counts.append(len(ends))
        subjects.append(s.subject_id)
    if not curves:
        raise PatternError("no sample has two or more end points")
    pooled = pool_hierarchical(curves, counts, subjects)
    mu = float(np.mean([t.n_ends for s in samples for t in s.trees]))
    params = fit_matern_mincontrast(pooled, mu, rmax=args.rmax)
    params.to_json(args.out)


# --- thin -------------------------------------------------------------------


def cmd_thin(args) -> None:
    samples = load_sample_dir(args.input)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = RngSpec(args.seed)
    for k, s in enumerate(samples):
        child = rng.child(k)
        if args.mode == "dependent":
            if args.theta is None or args.n_b is None:
                raise UsageError("dependent thinning needs --theta and --n-b")
            if s.n_trees <= args.n_b:
                raise PatternError(f"sample {s.sample_id}: {s.n_trees} trees, cannot thin to {args.n_b}")
            t = dependent_thin(s, args.theta, args.n_b, child)
        elif args.mode == "count":
            if args.n_b is None:
                raise UsageError("count thinning needs --n-b")
            t = thin_trees_to_count(s, args.n_b, child)
        else:
            if args.p is None:
                raise UsageError(f"{args.mode} thinning needs --p")
            fn = p_thin_endpoints if args.mode == "p-ends" else p_thin_trees
            t = fn(s, args.p, child)
        if args.group:
            t = type(t)(t.sample_id, t.subject_id, Group(args.group), t.trees, t.window)
        save_sample_set(SampleSet([t]), out / f"{s.sample_id}.csv")


# --- infer ------------------------------------------------------------------


def _parse_prior(text: str, trunc: float) -> abcmod.PriorSpec:
    family, _, value = text.partition(":")
    try:
        if family == "exp":
            return abcmod.PriorSpec("exponential", float(value), trunc)
        if family == "unif":
            return abcmod.PriorSpec("uniform", 1.0, trunc, float(value))
    except ValueError as exc:
        raise UsageError(f"bad --prior {text!r}: {exc}") from exc
    raise UsageError(f"--prior must be exp:RATE or unif:HIGH, got {text!r}")


def _read_targets_csv(path) -> list[dict]:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        need = {"target_id", "n_B", "observed_summary"}
        if not reader.fieldnames or not need <= set(reader.fieldnames):
            raise FileFormatError(f"{path}: header must include target_id,n_B,observed_summary")
        for lineno, row in enumerate(reader, start=2):
            try:
                rows.append({
                    "target_id": row["target_id"],
                    "n_B": int(row["n_B"]),
                    "observed_summary": float(row["observed_summary"]),
                    "subject_id": row.get("subject_id") or row["target_id"],
                })
            except ValueError as exc:
                raise FileFormatError(f"{path}:{lineno}: {exc}") from exc
    return rows


def _targets_from_patterns(directory, f_config: FConfig, rng: RngSpec) -> list[dict]:
    rows = []
    for k, s in enumerate(load_sample_dir(directory)):
        rows.append({
            "target_id": s.sample_id,
            "n_B": s.n_trees,
            "observed_summary": abc_summary(s.base_pattern(), f_config, rng.child(k)),
            "subject_id": s.subject_id,
        })
    return rows


def cmd_infer(args) -> None:
    prior = _parse_prior(args.prior, args.trunc)
    try:
        config = abcmod.ABCConfig(
            n_sims=args.n_sims,
            accept_quantile=None if args.epsilon is not None else args.quantile,
            epsilon=args.epsilon,
            n_test_points=args.test_points,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    healthy = load_sample_dir(args.healthy).by_group(Group.HEALTHY)
    rng = RngSpec(args.seed)
    if args.targets:
        targets = _read_targets_csv(args.targets)
    elif args.target_dir:
        targets = _targets_from_patterns(args.target_dir, config.f_config(), rng.child(1))
    else:
        raise UsageError("give --targets CSV or --target-dir")
    table = abcmod.build_reference_table(
        healthy, [(t["target_id"], t["n_B"]) for t in targets], prior, config, rng.child(0),
        workers=_threads(args),
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    table.to_csv(out / "reference_table.csv")
    with open(out / "targets.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["target_id", "n_B", "observed_summary", "subject_id"])
        for t in targets:
            w.writerow([t["target_id"], t["n_B"], fmt(t["observed_summary"]), t["subject_id"]])
    summary = {"prior": {"family": prior.family, "rate": prior.rate, "trunc_low": prior.trunc_low},
               "n_sims": config.n_sims, "quantile": config.accept_quantile,
               "epsilon": config.epsilon, "seed": args.seed, "targets": {}}
    all_draws = []
    for t in targets:
        draws = abcmod.abc_accept(table, t["observed_summary"], config, t["target_id"])
        all_draws.append(draws)
        abcmod.write_posteriors([draws], out / f"posterior_{t['target_id']}.csv")
        entry = {"n_B": t["n_B"], "observed_summary": t["observed_summary"],
                 "n_accepted": len(draws), "threshold": draws.threshold,
                 "invalid_fraction": draws.invalid_fraction}
        if len(draws) >= 20:
            ps = abcmod.posterior_summary(draws)
            entry.update(median=ps["median"], ci95=list(ps["ci95"]))
        summary["targets"][t["target_id"]] = entry
    abcmod.write_posteriors(all_draws, out / "posterior.csv")
    _write_json(summary, out / "summary.json")


# --- envelope / report ------------------------------------------------------


def _load_targets_for_band(infer_dir: Path) -> list[Target]:
    rows = _read_targets_csv(infer_dir / "targets.csv")
    draws = abcmod.read_posteriors(infer_dir / "posterior.csv")
    out = []
    for r in rows:
        if r["target_id"] not in draws:
            raise FileFormatError(f"no posterior draws for target {r['target_id']}")
        out.append(Target(r["target_id"], r["n_B"], draws[r["target_id"]], r["subject_id"]))
    return out


def _envelope_outputs(env, statistic: str, out: Path, svg: bool, n_sim: int) -> dict:
    with open(out / f"envelope_{statistic}.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["r", "lo", "hi", "observed"])
        obs = env.observed.values if env.observed is not None else np.full(len(env.grid), np.nan)
        for row in zip(env.grid, env.lo, env.hi, obs):
            w.writerow([fmt(v) for v in row])
    verdict = {"statistic": statistic, "alpha": env.alpha, "n_sim": n_sim,
               "n_curves": env.n_curves, "few_curves": env.few_curves,
               "valid_grid_points": int(np.sum(env.valid))}
    if env.observed is not None:
        exits = env.observed_exits
        verdict["verdict"] = "inside" if exits.size == 0 else "outside"
        verdict["exit_r"] = [float(env.grid[i]) for i in exits]
    _write_json(verdict, out / f"envelope_{statistic}.json")
    if svg:
        reference = 1.0 if statistic == "markcorr" else 0.0
        with open(out / f"envelope_{statistic}.svg", "w", encoding="utf-8") as fh:
            fh.write(envelope_svg(env, statistic, reference))
    return verdict


def _band(args, statistic: str, healthy: SampleSet, targets, observed_samples, out: Path):
    stat = get_statistic(statistic)
    grid = default_grid(statistic, healthy)
    observed = None
    if observed_samples is not None:
        observed = stat.group_curve(list(observed_samples), grid)
    env = posterior_predictive_band(
        healthy, targets, statistic, n_sim=args.n_sim, alpha=args.alpha,
        rng=RngSpec(args.seed), grid=grid, observed=observed, workers=_threads(args),
    )
    return _envelope_outputs(env, statistic, out, args.svg, args.n_sim)


def cmd_envelope(args) -> None:
    healthy = load_sample_dir(args.healthy).by_group(Group.HEALTHY)
    targets = _load_targets_for_band(Path(args.infer_dir))
    observed = load_sample_dir(args.target_dir) if args.target_dir else None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _band(args, args.statistic, healthy, targets, observed, out)


def cmd_report(args) -> None:
    healthy = load_sample_dir(args.healthy).by_group(Group.HEALTHY)
    targets = _load_targets_for_band(Path(args.infer_dir))
    observed = load_sample_dir(args.target_dir) if args.target_dir else None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    verdicts = {name: _band(args, name, healthy, targets, observed, out) for name in STATISTICS}
    _write_json({"statistics": verdicts, "seed": args.seed}, out / "report.json")


# --- parser -----------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="enfthin", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, seed=True):
        if seed:
            sp.add_argument("--seed", type=int, required=True)
        sp.add_argument("--out", required=True)
        sp.add_argument("--threads", type=int, default=None)

    s = sub.add_parser("simulate", help="simulate healthy patterns")
    s.add_argument("model", choices=["poisson", "matern"])
    s.add_argument("--params")
    s.add_argument("--window")
    s.add_argument("--n-reps", type=int, required=True)
    s.add_argument("--group", default="healthy", choices=[g.value for g in Group])
    s.add_argument("--prefix", default="h")
    s.add_argument("--samples-per-subject", type=int, default=4)
    common(s)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("fit", help="minimum contrast Matern fit to healthy end points")
    s.add_argument("--healthy", required=True)
    s.add_argument("--rmax", type=float, default=100.0)
    common(s, seed=False)
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("thin", help="thin every pattern in a directory")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--mode", choices=["dependent", "count", "p-ends", "p-trees"], required=True)
    s.add_argument("--theta", type=float)
    s.add_argument("--n-b", type=int)
    s.add_argument("--p", type=float)
    s.add_argument("--group", choices=[g.value for g in Group])
    common(s)
    s.set_defaults(func=cmd_thin)

    s = sub.add_parser("infer", help="ABC reference table and posteriors")
    s.add_argument("--healthy", required=True)
    s.add_argument("--targets")
    s.add_argument("--target-dir")
    s.add_argument("--prior", default="exp:10")
    s.add_argument("--trunc", type=float, default=0.01)
    s.add_argument("--n-sims", type=int, default=100_000)
    mode = s.add_mutually_exclusive_group()
    mode.add_argument("--quantile", type=float, default=0.001)
    mode.add_argument("--epsilon", type=float)
    s.add_argument("--test-points", type=int, default=10_000)
    common(s)
    s.set_defaults(func=cmd_infer)

    for name, func in (("envelope", cmd_envelope), ("report", cmd_report)):
        s = sub.add_parser(name, help="posterior predictive global envelopes")
        s.add_argument("--healthy", required=True)
        s.add_argument("--infer-dir", required=True)
        s.add_argument("--target-dir")
        if name == "envelope":
            s.add_argument("--statistic", required=True, choices=list(STATISTICS))
        s.add_argument("--n-sim", type=int, default=2500)
        s.add_argument("--alpha", type=float, default=0.05)
        s.add_argument("--svg", action="store_true")
        common(s)
        s.set_defaults(func=func)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        args.func(args)
    except UsageError as exc:
        print(f"enfthin: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (abcmod.EligibilityError, FileFormatError, PatternError, OSError, KeyError) as exc:
        print(f"enfthin: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FitError, SummaryUndefined, abcmod.AcceptanceError, FloatingPointError) as exc:
        print(f"enfthin: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return 0


if __name__ == "__main__":
    sys.exit(main())
