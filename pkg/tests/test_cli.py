import json
from pathlib import Path

import numpy as np
import pytest

from confsynth import __version__
from confsynth.cli import build_parser, module_defaults, run
from confsynth.dataset import load_csv

GOLDEN = Path(__file__).parent / "data" / "eval_golden.json"


@pytest.fixture
def toy_files(tmp_path):
    assert run(["toy-gen", "--n-total", "100", "--seed", "0", "--out", str(tmp_path / "tr.csv")]) == 0
    assert run(["toy-gen", "--n-total", "200", "--seed", "1", "--out", str(tmp_path / "te.csv")]) == 0
    return tmp_path


def schema(obj):
    if isinstance(obj, dict):
        return {k: schema(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [schema(v) for v in obj[:1]]
    return type(obj).__name__


def assert_close(a, b):
    if isinstance(a, dict):
        assert a.keys() == b.keys()
        for k in a:
            assert_close(a[k], b[k])
    elif isinstance(a, list):
        assert len(a) == len(b)
        for x, y in zip(a, b):
            assert_close(x, y)
    elif isinstance(a, float):
        assert a == pytest.approx(b, abs=1e-9)
    else:
        assert a == b


def test_toy_gen_stdout(capsys):
    assert run(["toy-gen", "--n-total", "10"]) == 0
    out = capsys.readouterr()
    lines = out.out.splitlines()
    assert lines[0] == "f0,f1,label" and len(lines) == 11
    assert out.err == ""


def test_synth_happy_path(toy_files, capsys):
    out = toy_files / "syn.csv"
    code = run(["synth", "--train", str(toy_files / "tr.csv"), "--epsilon", "0.95", "--grid-step", "0.05",
                "--k", "1", "--calib-fraction", "0.5", "--seed", "7", "--out", str(out)])
    assert code == 0
    assert capsys.readouterr().out == ""
    syn = load_csv(out)
    summary = json.loads((toy_files / "regions.json").read_text())
    assert summary["epsilon"] == 0.95 and summary["gamma"] == 0.05
    assert sum(c["synth_count"] for c in summary["per_class"]) == len(syn)


def test_synth_stdout_and_field(toy_files, capsys):
    field = toy_files / "field.csv"
    code = run(["synth", "--train", str(toy_files / "tr.csv"), "--epsilon", "0.9", "--grid-step", "0.2",
                "--field", str(field)])
    assert code == 0
    assert capsys.readouterr().out.startswith("f0,f1,label\n")
    assert field.read_text().startswith("flat_index,x0,x1,p_")


def test_minority_only(toy_files):
    out = toy_files / "syn.csv"
    assert run(["synth", "--train", str(toy_files / "tr.csv"), "--epsilon", "0.9", "--grid-step", "0.1",
                "--minority-only", "0", "--out", str(out)]) == 0
    syn = load_csv(out)
    assert syn.class_names == ("0",)


def test_score_grid_matches_synth_field(toy_files, capsys):
    args = ["--train", str(toy_files / "tr.csv"), "--grid-step", "0.2", "--seed", "3"]
    assert run(["score-grid", *args]) == 0
    streamed = capsys.readouterr().out
    field = toy_files / "f.csv"
    assert run(["synth", *args, "--field", str(field), "--out", str(toy_files / "s.csv")]) == 0
    assert field.read_text() == streamed


def test_split(toy_files):
    p, c = toy_files / "p.csv", toy_files / "c.csv"
    assert run(["split", "--train", str(toy_files / "tr.csv"), "--out-proper", str(p), "--out-calib", str(c)]) == 0
    assert len(load_csv(p)) + len(load_csv(c)) == 100


def test_bad_epsilon(toy_files, capsys):
    code = run(["synth", "--train", str(toy_files / "tr.csv"), "--epsilon", "1.5"])
    assert code == 1
    err = capsys.readouterr().err
    assert err.strip() == "error: epsilon must be in [0,1]"


def test_unknown_and_conflicting_flags(capsys):
    assert run(["toy-gen", "--train", "x.csv"]) == 1
    assert run(["synth", "--bogus"]) == 1
    assert run([]) == 1
    assert all(line.startswith("error:") for line in capsys.readouterr().err.splitlines())


def test_data_error(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("f0,label\nabc,1\n")
    assert run(["synth", "--train", str(bad)]) == 2
    assert run(["synth", "--train", str(tmp_path / "missing.csv")]) == 2
    assert capsys.readouterr().err.startswith("error:")


def test_resource_error(toy_files, capsys):
    code = run(["synth", "--train", str(toy_files / "tr.csv"), "--grid-step", "0.001", "--grid-cap", "1000"])
    assert code == 3
    assert "grid" in capsys.readouterr().err


def test_version(capsys):
    assert run(["version"]) == 0
    assert run(["--version"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines == [f"confsynth {__version__} (toy-v1)"] * 2


def test_eval_matches_golden(toy_files, capsys):
    syn = toy_files / "syn.csv"
    assert run(["synth", "--train", str(toy_files / "tr.csv"), "--epsilon", "0.9", "--grid-step", "0.1",
                "--seed", "7", "--out", str(syn)]) == 0
    capsys.readouterr()
    code = run(["eval", "--orig", str(toy_files / "tr.csv"), "--syn", str(syn), "--test", str(toy_files / "te.csv"),
                "--repeats", "2", "--seed", "7", "--epochs", "30"])
    assert code == 0
    report = json.loads(capsys.readouterr().out)
    golden = json.loads(GOLDEN.read_text())
    assert schema(report) == schema(golden)
    assert_close(report, golden)
    for name in ("train_orig", "train_syn", "train_ext"):
        assert {"f1_mean", "f1_std", "precision_mean", "recall_mean", "per_class"} <= set(report["summary"][name])


def test_eval_repeats_five(toy_files, capsys):
    syn = toy_files / "syn.csv"
    run(["synth", "--train", str(toy_files / "tr.csv"), "--epsilon", "0.9", "--grid-step", "0.1", "--out", str(syn)])
    capsys.readouterr()
    assert run(["eval", "--orig", str(toy_files / "tr.csv"), "--syn", str(syn), "--test", str(toy_files / "te.csv"),
                "--epochs", "5", "--seed", "7"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert len(report["runs"]) == 15


def test_flag_defaults_match_modules():
    defaults = module_defaults()
    parser = build_parser()
    sub = next(a for a in parser._actions if a.dest == "command")
    dest_alias = {"toy-gen": {"seed": "toy_seed"}, "eval": {"workers": "eval_workers"}}
    checked = 0
    for name, subparser in sub.choices.items():
        for action in subparser._actions:
            key = dest_alias.get(name, {}).get(action.dest, action.dest)
            if key in defaults:
                assert action.default == defaults[key], (name, action.dest)
                checked += 1
    assert checked >= 30
    assert defaults["epsilon"] == 0.95 and defaults["grid_step"] == 0.005
    assert defaults["k"] == 1 and defaults["calib_fraction"] == 0.5
