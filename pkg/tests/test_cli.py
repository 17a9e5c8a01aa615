import argparse
import csv
import json
import subprocess
import sys
from pathlib import Path

import pytest

from prunexai.cli import build_parser, main

ROOT = Path(__file__).resolve().parents[1]
FAST = ["--model.kind", "ridge", "--explain.n_coalitions", "128", "--explain.background_size", "10",
        "--data.synthetic.n_samples", "200"]


def run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def subparsers(parser):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices
    return {}


def test_no_arguments_prints_usage(capsys):
    code, _, err = run([], capsys)
    assert code == 1 and "usage:" in err


def test_help_lists_every_flag(capsys):
    parser = build_parser()
    parsers = {"": parser, **subparsers(parser)}
    for name, p in parsers.items():
        with pytest.raises(SystemExit) as info:
            main(([name] if name else []) + ["--help"])
        assert info.value.code == 0
        text = capsys.readouterr().out
        for action in p._actions:
            for flag in action.option_strings:
                assert flag in text, (name, flag)


def test_unknown_flag_exits_1(capsys):
    code, _, err = run(["generate", "--out", "x", "--frobnicate"], capsys)
    assert code == 1 and "usage:" in err


def test_generate_writes_thirty_features(tmp_path, capsys):
    code, _, err = run(["generate", "--samples", "50", "--structured", "20", "--noise", "10",
                        "--sigma", "0.05", "--seed", "1", "--out", str(tmp_path / "d")], capsys)
    assert code == 0 and "effective config" in err
    with open(tmp_path / "d" / "features.csv") as fh:
        header = next(csv.reader(fh))
    assert len(header) - 2 == 30


def test_generate_is_idempotent(tmp_path, capsys):
    for name in ("a", "b"):
        run(["generate", "--samples", "30", "--seed", "4", "--out", str(tmp_path / name)], capsys)
    for f in ("features.csv", "targets.csv", "schema.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_train_explain_prune_chain(tmp_path, capsys):
    d = str(tmp_path / "d")
    assert run(["generate", "--samples", "120", "--structured", "4", "--noise", "2", "--out", d], capsys)[0] == 0
    code, out, _ = run(["train", "--data", d, "--model", "ridge", "--out", str(tmp_path / "m.json")], capsys)
    assert code == 0 and json.loads(out)["test"]["mse"] >= 0
    code, out, _ = run(["--threads", "2", "explain", "--data", d, "--model-file", str(tmp_path / "m.json"),
                        "--exhaustive", "--out", str(tmp_path / "h.json")], capsys)
    assert code == 0 and (tmp_path / "h.csv").exists()
    code, out, _ = run(["prune", "--heatmap", str(tmp_path / "h.json"), "--strategy", "max",
                        "--top-k", "4", "--data", d, "--sample-q", "0.1", "--model", "ridge",
                        "--out", str(tmp_path / "p.json"), "--pruned-out", str(tmp_path / "d2")], capsys)
    assert code == 0
    plan = json.loads((tmp_path / "p.json").read_text())
    assert len(plan["features_removed"]) == 2 and len(plan["samples_removed"]) > 0
    assert (tmp_path / "d2" / "features.csv").exists()


def test_lime_explain(tmp_path, capsys):
    d = str(tmp_path / "d")
    run(["generate", "--samples", "60", "--structured", "3", "--noise", "1", "--out", d], capsys)
    run(["train", "--data", d, "--model", "ridge", "--out", str(tmp_path / "m.json")], capsys)
    code, _, _ = run(["explain", "--data", d, "--model-file", str(tmp_path / "m.json"),
                      "--method", "lime", "--out", str(tmp_path / "h.json")], capsys)
    assert code == 0
    assert json.loads((tmp_path / "h.json").read_text())["method"] == "lime"


def test_conflicting_flags_exit_1(tmp_path, capsys):
    h = str(tmp_path / "h.json")
    assert run(["prune", "--heatmap", h, "--strategy", "max", "--tau", "0.1", "--top-k", "2", "--out", "p"],
               capsys)[0] == 1
    assert run(["prune", "--heatmap", h, "--strategy", "selective", "--top-k", "2", "--out", "p"],
               capsys)[0] == 1
    assert run(["explain", "--data", "d", "--model-file", "m", "--exhaustive", "--coalitions", "5",
                "--out", "h"], capsys)[0] == 1


def test_data_error_exit_2_with_json_errors(tmp_path, capsys):
    bad = tmp_path / "bad"
    bad.mkdir()
    (bad / "features.csv").write_text("sample_id,time_index,a\ns1,0,oops\n")
    (bad / "targets.csv").write_text("sample_id,target\ns1,1\n")
    code, _, err = run(["--json-errors", "train", "--data", str(bad), "--out", "m.json"], capsys)
    assert code == 2
    payload = json.loads(err.strip().splitlines()[-1])
    assert set(payload) == {"stage", "message"} and "non-numeric" in payload["message"]


def test_numeric_error_exit_3(tmp_path, capsys):
    cfg = ["pipeline", "--out", str(tmp_path / "o"), *FAST, "--model.kind", "mlp",
           "--model.learning_rate", "1e200", "--model.max_epochs", "2"]
    code, _, err = run(["--json-errors", *cfg], capsys)
    assert code == 3
    assert json.loads(err.strip().splitlines()[-1])["stage"] == "train"


def test_pipeline_overrides_and_report(tmp_path, capsys):
    out = tmp_path / "o"
    code, stdout, err = run(["pipeline", "--out", str(out), *FAST, "--feature_prune.tau", "0.1"], capsys)
    assert code == 0 and "| Baseline |" in stdout
    echoed = json.loads(err.split("effective config: ", 1)[1].splitlines()[0])
    assert echoed["feature_prune"]["tau"] == 0.1 and echoed["model"]["kind"] == "ridge"
    code, stdout, _ = run(["report", "--in", str(out / "report.json"), "--format", "csv"], capsys)
    assert code == 0 and stdout.splitlines()[0].startswith("method,")
    code, stdout, _ = run(["report", "--in", str(out / "report.json")], capsys)
    assert "| Method | Time (s) | Size (%) | MSE |" in stdout


def test_bad_override_exit_1(capsys):
    assert run(["pipeline", "--model.nope", "1"], capsys)[0] == 1
    assert run(["train", "--model.kind", "mlp", "--data", "d", "--out", "m"], capsys)[0] == 1


def test_fixture_config_twice_identical(tmp_path, capsys):
    cfg = str(ROOT / "fixtures" / "synthetic.json")
    for k, threads in enumerate(("1", "4")):
        assert run(["--threads", threads, "pipeline", "--config", cfg, "--out", str(tmp_path / f"r{k}")],
                   capsys)[0] == 0
    assert (tmp_path / "r0" / "report.json").read_bytes() == (tmp_path / "r1" / "report.json").read_bytes()


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "prunexai"], capture_output=True, text=True)
    assert proc.returncode == 1 and "usage:" in proc.stderr
