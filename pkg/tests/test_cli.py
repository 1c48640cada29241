import json
import subprocess
import sys

import pytest

from ssrcnn.cli import main

SMALL = ["--seed", "3", "--images", "4"]


def run(*argv):
    return main([str(a) for a in argv])


def test_gen_is_deterministic(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert run("gen", *SMALL, "--out", a, "--predictions", tmp_path / "pa.json") == 0
    assert run("gen", *SMALL, "--out", b, "--predictions", tmp_path / "pb.json") == 0
    assert a.read_text() == b.read_text()
    assert (tmp_path / "pa.json").read_text() == (tmp_path / "pb.json").read_text()
    raw = json.loads(a.read_text())
    assert raw["config"]["seed"] == 3 and len(raw["images"]) == 4


def test_eval_of_exact_predictions_is_perfect(tmp_path, capsys):
    gt, pred, out = tmp_path / "gt.json", tmp_path / "p.json", tmp_path / "m.json"
    assert run("gen", *SMALL, "--out", gt, "--predictions", pred, "--exact") == 0
    assert run("eval", "--gt", gt, "--pred", pred, "--k-at", "20,50", "--out", out) == 0
    m = json.loads(out.read_text())
    assert m["R"] == {"20": 100.0, "50": 100.0}
    assert m["wmAP_rel"] == m["wmAP_phr"] == m["score"] == 100.0
    assert (tmp_path / "m.csv").exists()
    assert "@50" in capsys.readouterr().out


def test_report_prints_weighted_score(tmp_path, capsys):
    out = tmp_path / "r.json"
    assert run("report", "--r50", 74.92, "--wmap-rel", 43.47, "--wmap-phr", 48.17, "--out", out) == 0
    assert json.loads(out.read_text())["score_rounded"] == 51.64
    assert "51.64" in capsys.readouterr().out


def test_usage_errors_are_json_on_stderr(capsys):
    assert run("eval", "--bogus") == 2
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "usage"
    assert run("report") == 2


def test_schema_errors_name_the_field(tmp_path, capsys):
    bad = tmp_path / "gt.json"
    bad.write_text(json.dumps({"vocab": {"objects": ["a"], "predicates": ["p"]}, "images": [
        {"width": 10, "height": 10, "objects": [{"id": 0, "label": "a", "bbox": [5, 0, 2, 4]}]}]}))
    assert run("eval", "--gt", bad, "--pred", bad) == 1
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "schema" and err["field"] == "images[0].objects[0].bbox"
    bad.write_text("{not json")
    assert run("eval", "--gt", bad, "--pred", bad) == 1
    assert "line 1 column" in capsys.readouterr().err


def test_calibrate_writes_curve(tmp_path):
    gt, pred, out = tmp_path / "gt.json", tmp_path / "p.json", tmp_path / "c.json"
    assert run("gen", *SMALL, "--out", gt, "--predictions", pred) == 0
    assert run("calibrate", "--gt", gt, "--pred", pred, "--taus", 0, 0.5, "--out", out,
               "--freq-out", tmp_path / "f.json") == 0
    curve = json.loads(out.read_text())["curve"]
    assert [row["tau"] for row in curve] == [0.0, 0.5]
    assert (tmp_path / "f.json").exists()


def test_fit_and_assign_run_in_parallel(tmp_path):
    args = ["--seed", "1", "--images", "2", "--queries", "8", "--jobs", "2"]
    assert run("assign", *args, "--out", tmp_path / "a.json") == 0
    assert len(json.loads((tmp_path / "a.json").read_text())["images"]) == 2
    assert run("fit", *args, "--steps", "5", "--out", tmp_path / "f.json") == 0
    assert (tmp_path / "f.csv").read_text().startswith("image,step,loss,R@20")


def test_forward_weight_round_trip(tmp_path):
    w, a, b = tmp_path / "w.npz", tmp_path / "a.json", tmp_path / "b.json"
    assert run("forward", "--queries", 4, "--heads", 2, "--save-weights", w, "--out", a) == 0
    assert run("forward", "--queries", 4, "--heads", 2, "--weights", w, "--out", b) == 0
    assert json.loads(a.read_text())["top"] == json.loads(b.read_text())["top"]


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "ssrcnn", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and "ssrcnn" in r.stdout


@pytest.mark.parametrize("flag", ["--graph-constraint", "--profile"])
def test_choice_flags_validated(flag, capsys):
    assert run("eval", flag, "maybe", "--gt", "x", "--pred", "y") == 2
