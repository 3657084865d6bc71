import json
import os

import pytest

from attenfair.cli import main

CONFIGS = os.path.join(os.path.dirname(__file__), os.pardir, "configs")


def _write(path, text):
    path.write_text(text)
    return str(path)


@pytest.fixture
def fixture_csv(tmp_path):
    # group 0 gets every class-0 case right, group 1 gets every one wrong
    rows = [(0, 0, 0), (0, 0, 0), (1, 1, 0), (1, 1, 0), (0, 1, 1), (0, 1, 1), (1, 1, 1), (1, 1, 1)]
    lines = ["sample_id,y_true,y_pred,sensitive"] + [f"s{i},{y},{p},{a}" for i, (y, p, a) in enumerate(rows)]
    return _write(tmp_path / "pred.csv", "\n".join(lines) + "\n")


def _report(tmp_path, name, acc, eodd):
    return _write(tmp_path / name, json.dumps({"macro_f1": acc, "accuracy": acc, "eodd": eodd}))


def test_eval_fixture(fixture_csv, capsys):
    assert main(["eval", "--pred", fixture_csv, "--classes", "2"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert (rep["eopp0"], rep["eopp1"], rep["eodd"]) == (1.0, 1.0, 2.0)


def test_eval_markdown_to_file(fixture_csv, tmp_path, capsys):
    out = tmp_path / "nested.md"
    assert main(["eval", "--pred", fixture_csv, "--classes", "2", "--markdown", "--out", str(out)]) == 0
    assert capsys.readouterr().out == ""
    assert out.read_text().startswith("|")


def test_eval_lists_skipped_cells(tmp_path, capsys):
    path = _write(tmp_path / "p.csv", "sample_id,y_true,y_pred,sensitive\na,0,0,0\nb,1,0,1\n")
    assert main(["eval", "--pred", path, "--classes", "2"]) == 0
    assert "skipped: class 0 group 1 TPR" in capsys.readouterr().err


def test_eval_empty_file(tmp_path, capsys):
    path = _write(tmp_path / "empty.csv", "sample_id,y_true,y_pred,sensitive\n")
    assert main(["eval", "--pred", path, "--classes", "2"]) == 1
    assert "no records" in capsys.readouterr().err


def test_eval_unknown_column(tmp_path):
    path = _write(tmp_path / "bad.csv", "sample_id,y_true,y_pred,group\na,0,0,0\n")
    assert main(["eval", "--pred", path, "--classes", "2"]) == 2


def test_eval_missing_group(tmp_path, capsys):
    path = _write(tmp_path / "p.csv", "sample_id,y_true,y_pred,sensitive\na,0,0,0\nb,1,1,0\n")
    assert main(["eval", "--pred", path, "--classes", "2"]) == 1
    assert "group 1" in capsys.readouterr().err


def test_unknown_flag_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["eval", "--frobnicate"])
    assert exc.value.code == 2


def test_fate_single_value(tmp_path, capsys):
    base = _report(tmp_path, "b.json", 0.75, 0.028)
    mitig = _report(tmp_path, "m.json", 0.76, 0.015)
    assert main(["fate", "--base", base, "--mitig", mitig, "--lambda", "1"]) == 0
    assert json.loads(capsys.readouterr().out)["fate"] == pytest.approx(0.47762, abs=1e-5)


def test_fate_identical_reports_sweep(tmp_path, capsys):
    base = _report(tmp_path, "b.json", 0.8, 0.05)
    assert main(["fate", "--base", base, "--mitig", base, "--sweep", "0:10:1"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "lambda,fate"
    assert len(lines) == 12
    assert all(float(line.split(",")[1]) == 0.0 for line in lines[1:])


def test_fate_zero_baseline_fc(tmp_path, capsys):
    base = _report(tmp_path, "b.json", 0.8, 0.0)
    assert main(["fate", "--base", base, "--mitig", base]) == 1
    assert "zero" in capsys.readouterr().err


def test_fate_bad_sweep(tmp_path):
    base = _report(tmp_path, "b.json", 0.8, 0.05)
    assert main(["fate", "--base", base, "--mitig", base, "--sweep", "0:1"]) == 2


def test_bias_round_trip(tmp_path, capsys):
    doc = {"base": {"tp": 8, "fn": 2, "fp": 4, "tn": 36}, "params": {"alpha": 2, "X": 6, "Y": 2}}
    src = _write(tmp_path / "in.json", json.dumps(doc))
    synth_out = tmp_path / "synth.json"
    assert main(["bias", "synth", "-i", src, "--out", str(synth_out)]) == 0
    synth = json.loads(synth_out.read_text())
    assert synth["A"] == {"tp": 18, "fn": 2, "fp": 14, "tn": 66}
    assert synth["gaps_exact"] == {"eopp0": "3/40", "eopp1": "1/10", "eodd": "7/40"}

    assert main(["bias", "analyze", "-i", str(synth_out)]) == 0
    analyzed = json.loads(capsys.readouterr().out)
    assert analyzed["params"] == synth["params"]
    assert analyzed["gaps_exact"] == synth["gaps_exact"]


def test_bias_bound_violation(tmp_path, capsys):
    doc = {"base": {"tp": 8, "fn": 2, "fp": 4, "tn": 36}, "params": {"alpha": 2, "X": 100, "Y": 2}}
    src = _write(tmp_path / "in.json", json.dumps(doc))
    assert main(["bias", "synth", "-i", src]) == 1
    assert "X <= alpha*TN'" in capsys.readouterr().err


def test_experiment_is_deterministic(tmp_path, capsys):
    cfg = os.path.join(CONFIGS, "quick.json")
    first, second = tmp_path / "a" / "b", tmp_path / "c"
    assert main(["experiment", "run", "--config", cfg, "--out", str(first)]) == 0
    assert main(["experiment", "run", "--config", cfg, "--out", str(second)]) == 0
    assert "atten_full" in capsys.readouterr().out
    names = sorted(os.listdir(first))
    assert {"report.json", "report.md", "manifest.json", "baseline.json", "atten_full.json"} <= set(names)
    for name in names:
        if name.endswith(".json"):
            assert (first / name).read_bytes() == (second / name).read_bytes()


def test_experiment_unwritable_dir(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    cfg = os.path.join(CONFIGS, "quick.json")
    assert main(["experiment", "run", "--config", cfg, "--out", str(blocker / "out")]) == 1
    assert "cannot write" in capsys.readouterr().err


def test_experiment_bad_config(tmp_path):
    cfg = _write(tmp_path / "c.json", json.dumps({"modes": ["atten_full"]}))
    assert main(["experiment", "run", "--config", cfg, "--out", str(tmp_path / "o")]) == 1


def test_gradcheck_passes(capsys):
    assert main(["gradcheck", "--trials", "1", "--seed", "3"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and "l_skin" in out


def test_help_lists_subcommands(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--help"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    for name in ("eval", "fate", "bias", "experiment", "gradcheck"):
        assert name in out
