import csv
import json
import math
import subprocess
import sys
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from tiltwise.cli import CURVE_COLUMNS, fmt, main, read_curve_csv, write_curve_csv
from tiltwise.estimators import EstimateRow, SensitivityCurve
from tiltwise.fixtures import SATURATED_EXACT

LN2 = math.log(2.0)
SVG = "{http://www.w3.org/2000/svg}"


def _cfg(tmp_path, **extra):
    cfg = {"models": SATURATED_EXACT, "sensitivity": {"eta_grid": [0.0, LN2], "estimators": ["om"]},
           "inference": {"ci": "none"}}
    cfg.update(extra)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return path


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _gids(svg_path):
    root = ET.parse(svg_path).getroot()
    out = {}
    for g in root.iter(f"{SVG}g"):
        gid = g.get("id", "")
        if gid.endswith(("-point", "-ci_low", "-ci_high")):
            out[gid] = g
    return out


def test_analyze_fixture_values(tmp_path, fx12_csv):
    out = tmp_path / "out"
    assert main(["analyze", "--config", str(_cfg(tmp_path)), "--data", str(fx12_csv),
                 "--out", str(out), "--no-plot"]) == 0
    rows = _rows(out / "curves.csv")
    assert list(rows[0].keys()) == CURVE_COLUMNS
    psi1 = {float(r["eta1"]): float(r["point"]) for r in rows if r["estimand"] == "psi1"}
    assert psi1[0.0] == pytest.approx(0.75, abs=1e-12)
    assert psi1[LN2] == pytest.approx(0.777778, abs=1e-6)
    assert all(r["interval"] == "none" and r["se"] == "nan" for r in rows)
    meta = json.loads((out / "metadata.json").read_text())
    assert meta["n"] == 12 and "numpy" in meta["versions"]
    assert not list(out.glob("*.svg"))


def test_analyze_both_intervals_and_figures(tmp_path, fx12_csv):
    out = tmp_path / "out"
    cfg = _cfg(tmp_path, models={"p": "logistic", "e": 0.5, "g": {"type": "logistic", "ridge": 0.1}},
               sensitivity={"eta_grid": [0.0, 0.5, 1.0], "estimators": ["om", "aug"]})
    assert main(["analyze", "--config", str(cfg), "--data", str(fx12_csv), "--out", str(out),
                 "--ci", "both", "--boot-reps", "40", "--seed", "3"]) == 0
    rows = _rows(out / "curves.csv")
    cells = {}
    for r in rows:
        cells.setdefault((r["eta1"], r["estimand"], r["estimator"]), []).append(r["interval"])
    assert all(sorted(v) == ["bootstrap", "jackknife"] for v in cells.values())
    svg = out / "psi1.svg"
    gids = _gids(svg)
    for series in ("om-jackknife", "om-bootstrap", "aug-jackknife", "aug-bootstrap"):
        for part in ("point", "ci_low", "ci_high"):
            g = gids[f"{series}-{part}"]
            assert len(list(g.iter(f"{SVG}path"))) == 1
        dashed = gids[f"{series}-ci_low"].find(f"{SVG}path").get("style", "")
        solid = gids[f"{series}-point"].find(f"{SVG}path").get("style", "")
        assert "stroke-dasharray" in dashed and "stroke-dasharray" not in solid
    assert sorted(p.name for p in out.glob("*.svg")) == sorted(
        f"{e}.svg" for e in ("psi1", "psi0", "phi1", "phi0", "rd_all", "rr_all", "rd_s0", "rr_s0"))


def test_analyze_no_interval_figure_has_point_lines_only(tmp_path, fx12_csv):
    out = tmp_path / "out"
    assert main(["analyze", "--config", str(_cfg(tmp_path)), "--data", str(fx12_csv),
                 "--out", str(out), "--plot"]) == 0
    gids = _gids(out / "psi1.svg")
    assert set(gids) == {"om-point"}


def test_simulate_outputs(tmp_path):
    out = tmp_path / "sim"
    assert main(["simulate", "--out", str(out), "--n", "20000"]) == 0
    with open(out / "data.csv") as fh:
        assert sum(1 for _ in fh) == 20001
    truth = json.loads((out / "truth.json").read_text())["truth"]
    assert truth["psi1_true"] == pytest.approx(7 / 12, abs=1e-15)


def test_simulate_bytes_reproducible(tmp_path):
    for name in ("a", "b"):
        assert main(["simulate", "--out", str(tmp_path / name), "--n", "3000", "--seed", "17"]) == 0
    assert (tmp_path / "a/data.csv").read_bytes() == (tmp_path / "b/data.csv").read_bytes()


def test_simulate_empty_fails(tmp_path, capsys):
    out = tmp_path / "sim"
    assert main(["simulate", "--out", str(out), "--n", "0"]) != 0
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert "empty dataset" in err["message"]
    assert json.loads((out / "error.json").read_text())["message"] == err["message"]


def test_analyze_missing_data_file(tmp_path):
    assert main(["analyze", "--data", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "o")]) == 2


def test_analyze_schema_error(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("x,s,a\n1,0,\n")
    assert main(["analyze", "--data", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "schema" in capsys.readouterr().err.lower()


def test_bad_config(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text("{not json")
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_validate_quick_and_negative_control(tmp_path, capsys):
    assert main(["validate", "--quick", "--out", str(tmp_path / "v")]) == 0
    report = json.loads((tmp_path / "v/validate.json").read_text())
    assert report["passed"] and report["quick"]
    assert main(["validate", "--quick", "--corrupt-tilt"]) == 1
    text = capsys.readouterr().out
    assert "FAIL  base_case_collapse" in text


def test_curve_csv_round_trip_17_digits(tmp_path):
    rng = np.random.default_rng(0)
    rows = [EstimateRow(float(e), -float(e), "psi1", "om", float(v), float(s), float(v - s), float(v + s), 0, "jackknife")
            for e, v, s in zip(rng.uniform(size=20), rng.uniform(size=20), rng.uniform(size=20) / 7)]
    rows.append(EstimateRow(0.0, 0.0, "rr_all", "om", float("nan")))
    path = tmp_path / "c.csv"
    write_curve_csv(SensitivityCurve(rows), path)
    back = read_curve_csv(path)
    for a, b in zip(rows, back):
        for f in ("eta1", "eta0", "value", "se", "ci_low", "ci_high"):
            va, vb = getattr(a, f), getattr(b, f)
            assert (math.isnan(va) and math.isnan(vb)) or va == vb
    assert fmt(0.1) == "0.10000000000000001"


def test_console_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "tiltwise.cli", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.strip()
