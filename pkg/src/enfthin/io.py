"""Readers and writers for pattern CSVs, window sidecars and curve CSVs."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .core import (
    CurveKind,
    Group,
    NerveSample,
    NerveTree,
    PatternError,
    Point,
    SampleSet,
    SummaryCurve,
    Window,
)

PATTERN_HEADER = ["subject_id", "sample_id", "group", "tree_id", "point_type", "x", "y"]


class FileFormatError(ValueError):
    """Malformed input file; the message names the file and line."""


def fmt(value: float) -> str:
    """Shortest round-tripping text for a float; empty for NaN."""
    value = float(value)
    if np.isnan(value):
        return ""
    return repr(value)


def window_sidecar(path: Path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".window.json")


def load_window(path) -> Window:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    try:
        w = data["window"]
        return Window(float(w["xmin"]), float(w["ymin"]), float(w["xmax"]), float(w["ymax"]))
    except (KeyError, TypeError) as exc:
        raise FileFormatError(f"{path}: expected {{'window': {{xmin, ymin, xmax, ymax}}}}") from exc


def save_window(window: Window, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"window": window.to_dict()}, fh, indent=2)
        fh.write("\n")


def load_sample_set(path, window: Window | None = None) -> SampleSet:
    """Read a pattern CSV into a validated :class:`SampleSet`.

    The window comes from ``window`` if given, else from the ``<stem>.window.json``
    sidecar next to the CSV, else the default 330 x 432 micron window.
    """
    path = Path(path)
    if window is None:
        sidecar = window_sidecar(path)
        window = load_window(sidecar) if sidecar.exists() else Window()

    # key (subject, sample) -> [group, {tree_id: [base, ends, first_line]}]
    samples: dict[tuple[str, str], list] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != PATTERN_HEADER:
            raise FileFormatError(f"{path}:1: header must be {','.join(PATTERN_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(PATTERN_HEADER):
                raise FileFormatError(f"{path}:{lineno}: expected 7 fields, got {len(row)}")
            subject, sample, group, tree, ptype, x, y = (c.strip() for c in row)
            try:
                group = Group(group)
                tree_id = int(tree)
                pt = Point(float(x), float(y))
            except (ValueError, PatternError) as exc:
                raise FileFormatError(f"{path}:{lineno}: {exc}") from exc
            if ptype not in ("base", "end"):
                if ptype == "branch":
                    raise FileFormatError(f"{path}:{lineno}: branch points are not supported")
                raise FileFormatError(f"{path}:{lineno}: unknown point_type {ptype!r}")
            if not window.contains([(pt.x, pt.y)])[0]:
                raise FileFormatError(
                    f"{path}:{lineno}: sample {sample}, tree {tree_id}: "
                    f"point ({pt.x}, {pt.y}) outside window"
                )
            entry = samples.setdefault((subject, sample), [group, {}])
            if entry[0] is not group:
                raise FileFormatError(f"{path}:{lineno}: sample {sample} has mixed groups")
            node = entry[1].setdefault(tree_id, [None, [], lineno])
            if ptype == "base":
                if node[0] is not None:
                    raise FileFormatError(
                        f"{path}:{lineno}: sample {sample}, tree {tree_id}: second base row"
                    )
                node[0] = pt
            else:
                node[1].append(pt)

    out = []
    for (subject, sample), (group, trees) in samples.items():
        built = []
        for tree_id, (base, ends, lineno) in trees.items():
            if base is None:
                raise FileFormatError(
                    f"{path}:{lineno}: sample {sample}, tree {tree_id}: no base row"
                )
            built.append(NerveTree(tree_id, base, tuple(ends)))
        try:
            out.append(NerveSample(sample, subject, group, tuple(built), window))
        except PatternError as exc:
            raise FileFormatError(f"{path}: {exc}") from exc
    try:
        return SampleSet(out)
    except PatternError as exc:
        raise FileFormatError(f"{path}: {exc}") from exc


def save_sample_set(samples: SampleSet, path, write_window: bool = True) -> None:
    """Write ``samples`` as a pattern CSV (plus window sidecar)."""
    path = Path(path)
    windows = {s.window for s in samples}
    if len(windows) > 1:
        raise PatternError("all samples in one file must share a window")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(PATTERN_HEADER)
        for s in samples:
            for t in s.trees:
                writer.writerow(
                    [s.subject_id, s.sample_id, s.group.value, t.tree_id, "base",
                     fmt(t.base.x), fmt(t.base.y)]
                )
                for p in t.ends:
                    writer.writerow(
                        [s.subject_id, s.sample_id, s.group.value, t.tree_id, "end",
                         fmt(p.x), fmt(p.y)]
                    )
    if write_window:
        save_window(windows.pop() if windows else Window(), window_sidecar(path))


def load_sample_dir(directory, window: Window | None = None) -> SampleSet:
    """Merge every pattern CSV in ``directory`` (sorted by name)."""
    directory = Path(directory)
    files = sorted(p for p in directory.glob("*.csv"))
    if not files:
        raise FileFormatError(f"{directory}: no pattern CSV files")
    samples = []
    for f in files:
        samples.extend(load_sample_set(f, window).samples)
    try:
        return SampleSet(samples)
    except PatternError as exc:
        raise FileFormatError(f"{directory}: {exc}") from exc


def save_curve(curve: SummaryCurve, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["r", "value"])
        for r, v in zip(curve.grid, curve.values):
            writer.writerow([fmt(r), fmt(v)])


def load_curve(path, kind=CurveKind.K) -> SummaryCurve:
    grid, values = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["r", "value"]:
            raise FileFormatError(f"{path}:1: header must be r,value")
        for lineno, row in enumerate(reader, start=2):
            try:
                grid.append(float(row[0]))
                values.append(float(row[1]) if row[1].strip() else np.nan)
            except (ValueError, IndexError) as exc:
                raise FileFormatError(f"{path}:{lineno}: {exc}") from exc
    return SummaryCurve(np.array(grid), np.array(values), kind)
