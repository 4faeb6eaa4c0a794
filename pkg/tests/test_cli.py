import csv
import json
import xml.etree.ElementTree as ET

import pytest

from enfthin.cli import main


def run(*argv):
    return main([str(a) for a in argv])


def snapshot(directory):
    return {p.relative_to(directory).as_posix(): p.read_bytes()
            for p in sorted(directory.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipe")
    assert run("simulate", "matern", "--n-reps", 8, "--seed", 7, "--out", root / "healthy") == 0
    assert run("simulate", "matern", "--n-reps", 2, "--seed", 8, "--prefix", "m",
               "--out", root / "mild_raw") == 0
    assert run("thin", "--in", root / "mild_raw", "--mode", "dependent", "--theta", 0.05,
               "--n-b", 14, "--group", "mild", "--seed", 3, "--out", root / "mild") == 0
    assert run("infer", "--healthy", root / "healthy", "--target-dir", root / "mild",
               "--n-sims", 200, "--test-points", 1000, "--quantile", 0.05,
               "--seed", 11, "--out", root / "infer") == 0
    return root


def test_simulate_deterministic_and_manifest(tmp_path):
    for d in ("a", "b"):
        assert run("simulate", "matern", "--n-reps", 2, "--seed", 7, "--out", tmp_path / d) == 0
    assert snapshot(tmp_path / "a") == snapshot(tmp_path / "b")
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert [f["file"] for f in manifest["files"]] == ["h0000.csv", "h0001.csv"]
    assert len({f["seed"] for f in manifest["files"]}) == 2


def test_simulate_poisson(tmp_path):
    assert run("simulate", "poisson", "--n-reps", 1, "--seed", 1, "--out", tmp_path) == 0
    assert (tmp_path / "h0000.csv").exists()


def test_simulate_zero_reps_is_usage_error(tmp_path, capsys):
    assert run("simulate", "matern", "--n-reps", 0, "--seed", 1, "--out", tmp_path) == 2
    assert "n-reps" in capsys.readouterr().err


def test_missing_required_flag_exits_2(tmp_path):
    with pytest.raises(SystemExit) as info:
        run("simulate", "matern", "--seed", 1, "--out", tmp_path)
    assert info.value.code == 2


def test_infer_flag_conflict_exits_2(pipeline, tmp_path):
    with pytest.raises(SystemExit) as info:
        run("infer", "--healthy", pipeline / "healthy", "--target-dir", pipeline / "mild",
            "--quantile", 0.001, "--epsilon", 5, "--seed", 1, "--out", tmp_path)
    assert info.value.code == 2


def test_infer_outputs(pipeline):
    out = pipeline / "infer"
    summary = json.loads((out / "summary.json").read_text())
    assert set(summary["targets"]) == {"m0000", "m0001"}
    for tid, entry in summary["targets"].items():
        assert entry["n_accepted"] >= 1
        assert entry["n_B"] == 14
        assert (out / f"posterior_{tid}.csv").exists()
    with open(out / "reference_table.csv") as fh:
        assert sum(1 for _ in csv.reader(fh)) == 1 + 2 * 200


def test_infer_rerun_identical(pipeline, tmp_path):
    assert run("infer", "--healthy", pipeline / "healthy", "--target-dir", pipeline / "mild",
               "--n-sims", 200, "--test-points", 1000, "--quantile", 0.05,
               "--seed", 11, "--out", tmp_path) == 0
    assert (tmp_path / "posterior.csv").read_bytes() == (pipeline / "infer" / "posterior.csv").read_bytes()


def test_infer_ineligible_target_exits_3(pipeline, tmp_path):
    targets = tmp_path / "t.csv"
    targets.write_text("target_id,n_B,observed_summary\nbig,500,30\n")
    assert run("infer", "--healthy", pipeline / "healthy", "--targets", targets, "--n-sims", 10,
               "--seed", 1, "--out", tmp_path / "o") == 3


def test_infer_epsilon_without_rows_exits_4(pipeline, tmp_path):
    targets = tmp_path / "t.csv"
    targets.write_text("target_id,n_B,observed_summary\nfar,14,1000\n")
    assert run("infer", "--healthy", pipeline / "healthy", "--targets", targets, "--n-sims", 20,
               "--test-points", 500, "--epsilon", 0.5, "--seed", 1, "--out", tmp_path / "o") == 4


def test_bad_input_file_exits_3(tmp_path):
    d = tmp_path / "bad"
    d.mkdir()
    (d / "x.csv").write_text("subject_id,sample_id,group,tree_id,point_type,x,y\na,s,healthy,1,base,q,1\n")
    assert run("fit", "--healthy", d, "--out", tmp_path / "p.json") == 3


def test_envelope_csv_svg_and_verdict(pipeline, tmp_path):
    assert run("envelope", "--healthy", pipeline / "healthy", "--infer-dir", pipeline / "infer",
               "--target-dir", pipeline / "mild", "--statistic", "L-ends", "--n-sim", 60,
               "--svg", "--seed", 5, "--out", tmp_path) == 0
    with open(tmp_path / "envelope_L-ends.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 101
    for row in rows:
        if row["lo"]:
            assert float(row["lo"]) <= float(row["hi"])
    verdict = json.loads((tmp_path / "envelope_L-ends.json").read_text())
    assert verdict["verdict"] in ("inside", "outside")
    svg = ET.parse(tmp_path / "envelope_L-ends.svg").getroot()
    polylines = svg.findall("{http://www.w3.org/2000/svg}polyline")
    assert [p.get("class") for p in polylines] == ["lo", "hi", "observed", "reference"]


def test_envelope_unknown_statistic_exits_2(pipeline, tmp_path):
    with pytest.raises(SystemExit) as info:
        run("envelope", "--healthy", pipeline / "healthy", "--infer-dir", pipeline / "infer",
            "--statistic", "nope", "--seed", 1, "--out", tmp_path)
    assert info.value.code == 2


def test_fit_writes_params(pipeline, tmp_path):
    assert run("fit", "--healthy", pipeline / "healthy", "--out", tmp_path / "p.json") == 0
    params = json.loads((tmp_path / "p.json").read_text())
    assert params["kappa"] > 0 and 10 < params["R"] < 50


def test_fit_without_end_points_exits_3(tmp_path):
    assert run("simulate", "poisson", "--n-reps", 4, "--seed", 2, "--out", tmp_path / "h") == 0
    assert run("fit", "--healthy", tmp_path / "h", "--out", tmp_path / "p.json") == 3


def test_thin_modes(pipeline, tmp_path):
    for mode, extra in (("count", ["--n-b", 10]), ("p-ends", ["--p", 0.5]), ("p-trees", ["--p", 0.5])):
        assert run("thin", "--in", pipeline / "healthy", "--mode", mode, *extra, "--seed", 1,
                   "--out", tmp_path / mode) == 0
    assert run("thin", "--in", pipeline / "healthy", "--mode", "dependent", "--theta", 0.1,
               "--seed", 1, "--out", tmp_path / "x") == 2
